"""Prognostic-score adjustment from historical control data."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, EstimationWarning
from .estimand import as_estimand
from .formula import Factor, Formula, Term, as_formula, column_names
from .glm import Link, as_family
from .learners import DEFAULT_CV_FOLDS, SuperLearnerFit, fit_best_learner
from .plugin import MarginalEffectEstimate, TrialData, as_trial, estimate_marginal_effect

logger = logging.getLogger(__name__)

SCORE_COLUMN = "prog"
LOGIT_CLAMP = 1e-6
POSITIVE_CLAMP = 1e-12
MAX_CLAMPED_FRACTION = 0.1


@dataclass
class PrognosticFit:
    super_learner: SuperLearnerFit
    prog_formula: Formula
    historical_n: int
    link: Link


@dataclass
class AdjustedEstimate:
    base: MarginalEffectEstimate
    prognostic: PrognosticFit
    score_column_label: str
    clamped_count: int = 0

    def __getattr__(self, name):
        # expose estimate, std_error, psi0_hat ... of the underlying estimate
        if name in ("base", "prognostic"):
            raise AttributeError(name)
        return getattr(self.base, name)

    def to_dict(self) -> dict:
        out = self.base.to_dict()
        sl = self.prognostic.super_learner
        out.update(
            {
                "winner_name": sl.winner_name,
                "winner_hypers": sl.winner_hypers,
                "cv_rmse_table": sl.cv_table,
                "historical_n": self.prognostic.historical_n,
                "clamped_count": self.clamped_count,
                "score_column": self.score_column_label,
            }
        )
        return out


def default_prog_formula(trial_formula, data_hist) -> Formula:
    """``response ~ every other column of data_hist`` as main effects."""
    trial_formula = as_formula(trial_formula)
    cols = column_names(data_hist)
    if trial_formula.response not in cols:
        raise DataError(
            f"historical data lacks the response column {trial_formula.response!r}", code="MISSING_COLUMN"
        )
    terms = tuple(Term((Factor(c),)) for c in cols if c != trial_formula.response)
    return Formula(trial_formula.response, terms)


def transform_score(scores, link: Link) -> tuple[np.ndarray, int]:
    """Apply the link to prognostic scores, clamping into its domain.

    Returns the transformed scores and the number of clamped entries.
    """
    scores = np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(scores)):
        raise DataError("prognostic scores must be finite", code="NON_FINITE")
    if link.name == "logit":
        clamped = np.clip(scores, LOGIT_CLAMP, 1 - LOGIT_CLAMP)
    elif link.name in ("log", "inverse", "inverse_squared"):
        clamped = np.maximum(scores, POSITIVE_CLAMP)
    else:
        clamped = scores
    count = int(np.sum(clamped != scores))
    if count:
        if count > MAX_CLAMPED_FRACTION * len(scores):
            raise DataError(
                f"{count} of {len(scores)} prognostic scores fall outside the {link.name} link domain",
                code="LINK_DOMAIN",
            )
        warnings.warn(
            f"{count} prognostic scores clamped into the {link.name} link domain", EstimationWarning, stacklevel=2
        )
    return link(clamped), count


def _score_label(data) -> str:
    cols = set(column_names(data))
    label = SCORE_COLUMN
    i = 1
    while label in cols:
        label = f"{SCORE_COLUMN}_{i}"
        i += 1
    if label != SCORE_COLUMN:
        warnings.warn(f"column {SCORE_COLUMN!r} exists; prognostic score stored as {label!r}", EstimationWarning, stacklevel=3)
    return label


def fit_prognostic_model(formula, data_hist, family="gaussian", prog_formula=None, cv_prog_folds=DEFAULT_CV_FOLDS, learners=None, seed=0) -> PrognosticFit:
    formula = as_formula(formula)
    prog_formula = default_prog_formula(formula, data_hist) if prog_formula is None else as_formula(prog_formula)
    sl = fit_best_learner(prog_formula, data_hist, cv_prog_folds, learners, seed=seed)
    return PrognosticFit(sl, prog_formula, sl.training_summary["n"], as_family(family).link)


def estimate_with_prognostic_score(
    formula,
    data,
    data_hist,
    family="gaussian",
    estimand="ate",
    prog_formula=None,
    cv_prog_folds: int = DEFAULT_CV_FOLDS,
    learners=None,
    cv_variance: bool = False,
    cv_variance_folds: int = 10,
    *,
    exposure: str | None = None,
    exposure_prob: float | None = None,
    seed=0,
    level: float = 0.95,
    prognostic: PrognosticFit | None = None,
) -> AdjustedEstimate:
    """Plug-in estimation adjusting for a prognostic score learned on historical controls.

    The super learner is fit on ``data_hist``; its predictions on the trial
    rows are mapped through the trial family's link and added as one extra
    main-effect covariate. A pre-fitted ``prognostic`` model may be passed to
    skip the historical fit.
    """
    formula = as_formula(formula)
    trial: TrialData = as_trial(data, exposure, exposure_prob)
    family = as_family(family)
    if trial.exposure in column_names(data_hist):
        raise DataError(
            f"historical data must not contain the exposure column {trial.exposure!r}", code="EXPOSURE_IN_HISTORICAL"
        )
    if prognostic is None:
        prognostic = fit_prognostic_model(formula, data_hist, family, prog_formula, cv_prog_folds, learners, seed)

    raw = prognostic.super_learner.predict(trial.data)
    score, clamped = transform_score(raw, family.link)
    label = _score_label(trial.data)
    augmented = {c: np.asarray(trial.data[c]) for c in column_names(trial.data)}
    augmented[label] = score
    adj_formula = formula.add_terms(Term((Factor(label),)))
    adj_trial = TrialData(augmented, trial.exposure, trial.exposure_prob)

    base = estimate_marginal_effect(
        adj_formula,
        adj_trial,
        family,
        as_estimand(estimand),
        cv_variance,
        cv_variance_folds,
        seed=seed,
        level=level,
    )
    return AdjustedEstimate(base, prognostic, label, clamped)
