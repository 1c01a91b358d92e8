"""GLM plug-in estimation of marginal treatment effects in two-arm trials.

The estimator fits a GLM, averages its predictions with the exposure forced
to each arm, plugs the two counterfactual means into the estimand, and takes
its standard error from the empirical variance of the influence function.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import stats

from .errors import DataError, EstimationWarning
from .estimand import EstimandSpec, as_estimand
from .formula import Formula, as_formula, build_design, column_names, get_column
from .glm import Family, GlmFit, as_family, irls_fit
from .rng import stream

logger = logging.getLogger(__name__)

ARM_IMBALANCE_WARNING = 0.1


@dataclass(frozen=True)
class TrialData:
    """Trial dataset with a binary exposure column and known randomization probability."""

    data: object
    exposure: str
    exposure_prob: float

    def __post_init__(self):
        if not 0 < self.exposure_prob < 1:
            raise DataError("exposure_prob must lie strictly between 0 and 1", code="BAD_EXPOSURE_PROB")
        a = self.a
        if not np.all((a == 0) | (a == 1)):
            raise DataError(f"exposure column {self.exposure!r} must be coded 0/1", code="BAD_EXPOSURE")
        if a.sum() == 0 or a.sum() == len(a):
            raise DataError("both treatment arms must be non-empty", code="SINGLE_ARM")

    @cached_property
    def a(self) -> np.ndarray:
        return get_column(self.data, self.exposure)

    @property
    def n(self) -> int:
        return len(self.a)

    @property
    def n1(self) -> int:
        return int(self.a.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    def outcome(self, formula: Formula) -> np.ndarray:
        return get_column(self.data, formula.response)

    def subset(self, rows) -> TrialData:
        sub = {c: np.asarray(self.data[c])[rows] for c in column_names(self.data)}
        return TrialData(sub, self.exposure, self.exposure_prob)


@dataclass(frozen=True)
class InfluenceComponents:
    phi0: np.ndarray
    phi1: np.ndarray


@dataclass(frozen=True)
class MarginalEffectEstimate:
    psi0_hat: float
    psi1_hat: float
    estimate: float
    std_error: float
    if_values: np.ndarray = field(repr=False)
    cv_used: bool
    glm: GlmFit = field(repr=False)
    estimand: EstimandSpec = field(repr=False)
    n: int = 0
    level: float = 0.95

    @property
    def ci(self) -> tuple[float, float]:
        z = stats.norm.ppf(0.5 + self.level / 2)
        return self.estimate - z * self.std_error, self.estimate + z * self.std_error

    def to_dict(self) -> dict:
        lo, hi = self.ci
        return {
            "psi0": self.psi0_hat,
            "psi1": self.psi1_hat,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "ci_low": lo,
            "ci_high": hi,
            "ci_level": self.level,
            "estimand_name": self.estimand.name,
            "family": self.glm.family.kind,
            "n": self.n,
            "cv_used": self.cv_used,
            "coefficients": self.glm.coef(),
        }


def as_trial(data, exposure=None, exposure_prob=None) -> TrialData:
    if isinstance(data, TrialData):
        return data
    if exposure is None or exposure_prob is None:
        raise DataError("exposure and exposure_prob are required", code="MISSING_ARGUMENT")
    return TrialData(data, exposure, float(exposure_prob))


def _check_exposure(formula: Formula, trial: TrialData):
    if trial.exposure not in formula.columns:
        raise DataError(
            f"exposure {trial.exposure!r} must appear on the right-hand side of {formula}",
            code="EXPOSURE_NOT_IN_FORMULA",
        )


def counterfactual_predictions(fit: GlmFit, formula: Formula, data: TrialData):
    """Per-subject predictions with the exposure set to 0 and to 1."""
    _check_exposure(formula, data)
    mu0 = fit.predict_design(build_design(formula, data.data, {data.exposure: 0.0}))
    mu1 = fit.predict_design(build_design(formula, data.data, {data.exposure: 1.0}))
    return mu0, mu1


def counterfactual_means(fit: GlmFit, formula, data: TrialData) -> tuple[float, float]:
    mu0, mu1 = counterfactual_predictions(fit, as_formula(formula), data)
    return float(np.mean(mu0)), float(np.mean(mu1))


def _phi(y, a, mu0, mu1, psi0, psi1, pi1):
    phi0 = (a == 0) / (1 - pi1) * (y - mu0) + (mu0 - psi0)
    phi1 = (a == 1) / pi1 * (y - mu1) + (mu1 - psi1)
    return phi0, phi1


def influence_components(fit: GlmFit, formula, data: TrialData, psi0_hat: float, psi1_hat: float) -> InfluenceComponents:
    """Per-subject influence function of each counterfactual mean.

    Uses the supplied randomization probability, not the observed arm split.
    """
    formula = as_formula(formula)
    mu0, mu1 = counterfactual_predictions(fit, formula, data)
    phi0, phi1 = _phi(data.outcome(formula), data.a, mu0, mu1, psi0_hat, psi1_hat, data.exposure_prob)
    return InfluenceComponents(phi0, phi1)


def if_variance(components: InfluenceComponents, estimand, psi0_hat: float, psi1_hat: float):
    """Delta-method combination of the influence components.

    Returns ``(v, if_values)`` with ``v`` the uncentered mean of squares.
    """
    estimand = as_estimand(estimand)
    d0, d1 = estimand.derivatives(psi1_hat, psi0_hat)
    if_values = d0 * components.phi0 + d1 * components.phi1
    return float(np.mean(if_values**2)), if_values


def stratified_folds(a, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold labels 0..folds-1, dealt round-robin within each arm after shuffling."""
    a = np.asarray(a)
    labels = np.empty(len(a), dtype=int)
    for arm in (0, 1):
        idx = np.flatnonzero(a == arm)
        idx = idx[rng.permutation(len(idx))]
        labels[idx] = np.arange(len(idx)) % folds
    return labels


def cv_if_variance(formula, data: TrialData, family, estimand, folds: int = 10, *, seed=0, psi0_hat=None, psi1_hat=None):
    """Cross-fitted influence function and its sample variance.

    Each validation fold is scored by a GLM trained on the remaining folds,
    with fold-specific counterfactual means. Estimand derivatives are taken
    at ``(psi1_hat, psi0_hat)``, by default the full-data estimates.
    """
    formula = as_formula(formula)
    family = as_family(family)
    estimand = as_estimand(estimand)
    _check_exposure(formula, data)
    if folds < 2:
        raise DataError("cv_variance_folds must be at least 2", code="BAD_FOLDS")
    if folds > min(data.n0, data.n1):
        raise DataError(
            f"{folds} folds cannot be stratified by arm with arm sizes {data.n0} and {data.n1}",
            code="FOLD_IMBALANCE",
        )
    if psi0_hat is None or psi1_hat is None:
        full = _fit(formula, data, family)
        psi0_hat, psi1_hat = counterfactual_means(full, formula, data)
    d0, d1 = estimand.derivatives(psi1_hat, psi0_hat)

    labels = stratified_folds(data.a, folds, stream(seed, "cv_variance"))
    if_values = np.empty(data.n)
    for k in range(folds):
        train = data.subset(labels != k)
        valid = data.subset(labels == k)
        if train.n0 == 0 or train.n1 == 0:
            raise DataError(f"training part of fold {k} contains a single arm", code="SINGLE_ARM")
        fit = _fit(formula, train, family)
        mu0, mu1 = counterfactual_predictions(fit, formula, valid)
        phi0, phi1 = _phi(
            valid.outcome(formula), valid.a, mu0, mu1, mu0.mean(), mu1.mean(), data.exposure_prob
        )
        if_values[labels == k] = d0 * phi0 + d1 * phi1
    return float(np.var(if_values, ddof=1)), if_values


def _fit(formula: Formula, data: TrialData, family: Family) -> GlmFit:
    design = build_design(formula, data.data)
    return irls_fit(design, data.outcome(formula), family, formula=formula)


def estimate_marginal_effect(
    formula,
    data,
    family="gaussian",
    estimand="ate",
    cv_variance: bool = False,
    cv_variance_folds: int = 10,
    *,
    exposure: str | None = None,
    exposure_prob: float | None = None,
    seed=0,
    level: float = 0.95,
) -> MarginalEffectEstimate:
    """Plug-in estimate of a marginal effect with influence-function SE.

    Parameters
    ----------
    formula : str or Formula
        GLM formula; the exposure column must appear on the right-hand side.
    data : TrialData or mapping of columns
        When a plain table is given, ``exposure`` and ``exposure_prob`` are
        required.
    family : str or Family
        Response family; the canonical link is used.
    estimand : str, callable or EstimandSpec
        ``"ate"``, ``"rate_ratio"``, ``"odds_ratio"``, an expression in
        ``psi1``/``psi0`` or a custom spec.
    cv_variance : bool
        Use the cross-fitted influence function for the variance.
    cv_variance_folds : int
        Number of arm-stratified folds when ``cv_variance`` is set.
    seed : int
        Seed for the fold assignment.
    level : float
        Confidence level of the reported Wald interval.

    Returns
    -------
    MarginalEffectEstimate
    """
    formula = as_formula(formula)
    trial = as_trial(data, exposure, exposure_prob)
    family = as_family(family)
    estimand = as_estimand(estimand)
    _check_exposure(formula, trial)

    frac = trial.n1 / trial.n
    if abs(frac - trial.exposure_prob) > ARM_IMBALANCE_WARNING:
        warnings.warn(
            f"observed treated fraction {frac:.3f} differs from exposure_prob {trial.exposure_prob:.3f}",
            EstimationWarning,
            stacklevel=2,
        )

    fit = _fit(formula, trial, family)
    psi0, psi1 = counterfactual_means(fit, formula, trial)
    est = estimand(psi1, psi0)
    logger.info("psi0=%.6g psi1=%.6g estimate=%.6g", psi0, psi1, est)

    if cv_variance:
        v, if_values = cv_if_variance(
            formula, trial, family, estimand, cv_variance_folds, seed=seed, psi0_hat=psi0, psi1_hat=psi1
        )
    else:
        comps = influence_components(fit, formula, trial, psi0, psi1)
        v, if_values = if_variance(comps, estimand, psi0, psi1)

    return MarginalEffectEstimate(
        psi0_hat=psi0,
        psi1_hat=psi1,
        estimate=est,
        std_error=float(np.sqrt(v / trial.n)),
        if_values=if_values,
        cv_used=bool(cv_variance),
        glm=fit,
        estimand=estimand,
        n=trial.n,
        level=level,
    )
