"""Exponential-family GLMs fitted by iteratively reweighted least squares."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .errors import ConvergenceError, ModelFitError, RankDeficientError, SupportError, EstimationWarning
from .formula import DesignMatrix, Formula, as_formula, build_design, get_column

logger = logging.getLogger(__name__)

FAMILIES = ("gaussian", "binomial", "poisson", "gamma", "inverse_gaussian", "negative_binomial")

CANONICAL_LINKS = {
    "gaussian": "identity",
    "binomial": "logit",
    "poisson": "log",
    "gamma": "inverse",
    "inverse_gaussian": "inverse_squared",
    "negative_binomial": "log",
}

NB_THETA_CAP = 1e3

# fitted probabilities are kept this far from 0 and 1; |eta| beyond the
# saturation level at convergence signals separation
_MU_EPS = 10 * np.finfo(float).eps
_ETA_SATURATION = 30.0


class Link:
    """Link function g with inverse and derivative dg/dmu."""

    def __init__(self, name, fun, inverse, deriv, valid_eta=lambda eta: np.isfinite(eta)):
        self.name = name
        self._fun = fun
        self._inverse = inverse
        self._deriv = deriv
        self._valid_eta = valid_eta

    def __call__(self, mu):
        return self._fun(np.asarray(mu, dtype=float))

    def inverse(self, eta):
        return self._inverse(np.asarray(eta, dtype=float))

    def deriv(self, mu):
        return self._deriv(np.asarray(mu, dtype=float))

    def valid_eta(self, eta) -> bool:
        return bool(np.all(self._valid_eta(np.asarray(eta, dtype=float))))

    def __repr__(self):
        return f"Link({self.name!r})"

    def __eq__(self, other):
        return isinstance(other, Link) and other.name == self.name

    def __hash__(self):
        return hash(self.name)


LINKS = {
    "identity": Link("identity", lambda m: m, lambda e: e, lambda m: np.ones_like(m)),
    "logit": Link(
        "logit",
        special.logit,
        special.expit,
        lambda m: 1.0 / (m * (1.0 - m)),
    ),
    "log": Link("log", np.log, np.exp, lambda m: 1.0 / m),
    "inverse": Link("inverse", lambda m: 1.0 / m, lambda e: 1.0 / e, lambda m: -1.0 / m**2, lambda e: e > 0),
    "inverse_squared": Link(
        "inverse_squared",
        lambda m: 1.0 / m**2,
        lambda e: 1.0 / np.sqrt(e),
        lambda m: -2.0 / m**3,
        lambda e: e > 0,
    ),
}


def get_link(name) -> Link:
    if isinstance(name, Link):
        return name
    try:
        return LINKS[name]
    except KeyError:
        raise ModelFitError(f"unknown link {name!r}", code="UNKNOWN_LINK") from None


@dataclass(frozen=True)
class Family:
    """Response distribution.

    ``dispersion`` and ``nb_theta`` are either positive numbers or the string
    ``"estimated"``.
    """

    kind: str = "gaussian"
    dispersion: float | str = "estimated"
    nb_theta: float | str = "estimated"

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ModelFitError(f"unknown family {self.kind!r}", code="UNKNOWN_FAMILY")

    @property
    def link(self) -> Link:
        return LINKS[CANONICAL_LINKS[self.kind]]

    def with_theta(self, theta: float) -> Family:
        return Family(self.kind, self.dispersion, theta)

    def variance(self, mu, theta=None):
        kind = self.kind
        if kind == "gaussian":
            return np.ones_like(mu)
        if kind == "binomial":
            return mu * (1.0 - mu)
        if kind == "poisson":
            return mu
        if kind == "gamma":
            return mu**2
        if kind == "inverse_gaussian":
            return mu**3
        theta = self.nb_theta if theta is None else theta
        return mu + mu**2 / theta

    def unit_deviance(self, y, mu, theta=None):
        kind = self.kind
        if kind == "gaussian":
            return (y - mu) ** 2
        if kind == "binomial":
            return 2.0 * (special.xlogy(y, y / mu) + special.xlogy(1 - y, (1 - y) / (1 - mu)))
        if kind == "poisson":
            return 2.0 * (special.xlogy(y, y / mu) - (y - mu))
        if kind == "gamma":
            return 2.0 * (-np.log(y / mu) + (y - mu) / mu)
        if kind == "inverse_gaussian":
            return (y - mu) ** 2 / (y * mu**2)
        theta = self.nb_theta if theta is None else theta
        return 2.0 * (special.xlogy(y, y / mu) - (y + theta) * np.log((y + theta) / (mu + theta)))

    def deviance(self, y, mu, theta=None) -> float:
        return float(np.sum(self.unit_deviance(y, mu, theta)))

    def check_support(self, y):
        kind = self.kind
        if not np.all(np.isfinite(y)):
            raise SupportError("response contains non-finite values")
        if kind == "binomial" and np.any((y < 0) | (y > 1)):
            raise SupportError("binomial response must lie in [0, 1]")
        if kind in ("poisson", "negative_binomial") and np.any(y < 0):
            raise SupportError(f"{kind} response must be non-negative")
        if kind in ("gamma", "inverse_gaussian") and np.any(y <= 0):
            raise SupportError(f"{kind} response must be strictly positive")

    def check_mean(self, mu) -> bool:
        if not np.all(np.isfinite(mu)):
            return False
        if self.kind == "binomial":
            return bool(np.all((mu > 0) & (mu < 1)))
        if self.kind == "gaussian":
            return True
        return bool(np.all(mu > 0))

    def starting_mean(self, y):
        kind = self.kind
        if kind == "binomial":
            return (y + 0.5) / 2.0
        if kind in ("poisson", "negative_binomial"):
            return y + 0.1
        return y.astype(float)


def as_family(family) -> Family:
    if isinstance(family, Family):
        return family
    return Family(str(family))


@dataclass(frozen=True)
class GlmFit:
    coefficients: np.ndarray
    family: Family
    link: Link
    design_labels: list[str]
    deviance: float
    iterations: int
    converged: bool
    fitted: np.ndarray = field(repr=False)
    dispersion: float = 1.0
    formula: Formula | None = None

    @property
    def nb_theta(self):
        return self.family.nb_theta if self.family.kind == "negative_binomial" else None

    def linear_predictor(self, design) -> np.ndarray:
        X = design.matrix if isinstance(design, DesignMatrix) else np.atleast_2d(np.asarray(design, float))
        if X.shape[1] != len(self.coefficients):
            raise ModelFitError(
                f"design has {X.shape[1]} columns, fit has {len(self.coefficients)} coefficients",
                code="DIMENSION_MISMATCH",
            )
        return X @ self.coefficients

    def predict_design(self, design) -> np.ndarray:
        return self.link.inverse(self.linear_predictor(design))

    def predict(self, data, overrides=None) -> np.ndarray:
        """Conditional means on a dataset, rebuilding the design from the formula."""
        if self.formula is None:
            raise ModelFitError("fit has no formula attached; use predict_design")
        return self.predict_design(build_design(self.formula, data, overrides))

    def coef(self) -> dict[str, float]:
        return dict(zip(self.design_labels, map(float, self.coefficients)))


def predict_mean(fit: GlmFit, design_row) -> float:
    """Mean-scale prediction g^-1(row . beta) for a single design row."""
    row = np.asarray(design_row, dtype=float)
    if row.ndim != 1 or row.shape[0] != len(fit.coefficients):
        raise ModelFitError(
            f"row of length {row.size} does not match {len(fit.coefficients)} coefficients",
            code="DIMENSION_MISMATCH",
        )
    return float(fit.link.inverse(row @ fit.coefficients))


def _wls(X, z, w):
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
    return beta


def _irls(X, y, family, link, theta, tol, max_iter, max_halvings, beta_start=None):
    if beta_start is None:
        mu = family.starting_mean(y)
        eta = link(mu)
        beta_old = None
        dev_old = np.inf
    else:
        beta_old = beta_start
        eta = X @ beta_start
        mu = link.inverse(eta)
        dev_old = family.deviance(y, mu, theta)

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gprime = link.deriv(mu)
        z = eta + (y - mu) * gprime
        w = 1.0 / (family.variance(mu, theta) * gprime**2)
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ConvergenceError("IRLS weights became degenerate")
        beta = _wls(X, z, w)

        for _ in range(max_halvings + 1):
            eta_new = X @ beta
            ok = link.valid_eta(eta_new)
            if ok:
                mu_new = link.inverse(eta_new)
                if link.name == "logit":
                    mu_new = np.clip(mu_new, _MU_EPS, 1.0 - _MU_EPS)
                ok = family.check_mean(mu_new)
            if ok:
                dev = family.deviance(y, mu_new, theta)
                if np.isfinite(dev) and dev <= dev_old * (1 + 1e-12) + 1e-12:
                    break
            if beta_old is None:
                if ok and np.isfinite(dev):
                    break
                raise ConvergenceError("could not find valid starting coefficients")
            beta = 0.5 * (beta + beta_old)
        else:
            raise ConvergenceError("step-halving failed to decrease the deviance")

        eta, mu = eta_new, mu_new
        change = abs(dev - dev_old) / (abs(dev) + 0.1)
        beta_old, dev_old = beta, dev
        if change < tol:
            converged = True
            break
    return beta_old, eta, mu, dev_old, it, converged


def irls_fit(
    design: DesignMatrix,
    y,
    family="gaussian",
    *,
    tol: float = 1e-8,
    max_iter: int = 100,
    max_halvings: int = 10,
    formula: Formula | None = None,
) -> GlmFit:
    """Fit a GLM with the family's canonical link.

    Parameters
    ----------
    design : DesignMatrix
        Full column rank design including the intercept column.
    y : array_like
        Response, in the family's support.
    family : Family or str
        Negative binomial with ``nb_theta="estimated"`` alternates IRLS with
        moment updates of theta.

    Raises
    ------
    RankDeficientError, SupportError, ConvergenceError
    """
    family = as_family(family)
    link = family.link
    X = design.matrix if isinstance(design, DesignMatrix) else np.asarray(design, dtype=float)
    labels = list(design.column_labels) if isinstance(design, DesignMatrix) else [f"x{j}" for j in range(X.shape[1])]
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise ModelFitError("response length does not match design rows", code="DIMENSION_MISMATCH")
    if n < p:
        raise RankDeficientError(f"{n} rows cannot identify {p} coefficients")
    if np.linalg.matrix_rank(X) < p:
        raise RankDeficientError("design matrix is not of full column rank")
    family.check_support(y)

    if family.kind == "negative_binomial" and family.nb_theta == "estimated":
        return _fit_nb(X, y, family, labels, tol, max_iter, max_halvings, formula)

    theta = family.nb_theta if family.kind == "negative_binomial" else None
    beta, eta, mu, dev, it, converged = _irls(X, y, family, link, theta, tol, max_iter, max_halvings)
    if not converged:
        raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations")
    if link.name == "logit" and np.any(np.abs(eta) > _ETA_SATURATION):
        raise ConvergenceError(
            "fitted probabilities numerically 0 or 1; the data are (quasi-)separated"
        )
    return GlmFit(
        coefficients=beta,
        family=family,
        link=link,
        design_labels=labels,
        deviance=dev,
        iterations=it,
        converged=True,
        fitted=mu,
        dispersion=_dispersion(family, y, mu, n - p),
        formula=formula,
    )


def _dispersion(family, y, mu, df):
    if family.kind not in ("gaussian", "gamma", "inverse_gaussian"):
        return 1.0
    if isinstance(family.dispersion, (int, float)):
        return float(family.dispersion)
    if df <= 0:
        return float("nan")
    return float(np.sum((y - mu) ** 2 / family.variance(mu)) / df)


def estimate_nb_theta(y, mu, df_resid=None, cap: float = NB_THETA_CAP) -> float:
    """Moment estimate of the negative binomial shape theta.

    Solves ``sum((y - mu)^2 / (mu + mu^2/theta)) = df_resid`` (default ``n``).
    Values above ``cap`` are truncated with a warning.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if y.shape != mu.shape:
        raise ModelFitError("y and mu must have the same length", code="DIMENSION_MISMATCH")
    if np.any(mu <= 0):
        raise ModelFitError("mu must be strictly positive")
    df = len(y) if df_resid is None else df_resid
    r2 = (y - mu) ** 2
    if np.all(r2 == 0):
        raise ModelFitError("all residuals are zero; theta is not identifiable", code="THETA_UNIDENTIFIABLE")

    def excess(log_theta):
        theta = np.exp(log_theta)
        return np.sum(r2 / (mu + mu**2 / theta)) - df

    # excess() increases in theta; at the cap we are close to the Poisson limit
    if excess(np.log(cap)) <= 0:
        warnings.warn(
            f"negative binomial theta exceeds cap {cap:g}; data look Poisson", EstimationWarning, stacklevel=2
        )
        return float(cap)
    lo = np.log(cap) - 1.0
    while excess(lo) > 0:
        lo -= 1.0
        if lo < -50:
            raise ModelFitError("theta moment equation has no solution", code="THETA_UNIDENTIFIABLE")
    return float(np.exp(optimize.brentq(excess, lo, np.log(cap), xtol=1e-12)))


def _fit_nb(X, y, family, labels, tol, max_iter, max_halvings, formula):
    n, p = X.shape
    link = family.link
    pois = Family("poisson")
    beta, eta, mu, dev, it, converged = _irls(X, y, pois, link, None, tol, max_iter, max_halvings)
    if not converged:
        raise ConvergenceError("initial Poisson fit did not converge")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EstimationWarning)
        theta = estimate_nb_theta(y, mu, n - p)
    total = it
    for outer in range(50):
        beta, eta, mu, dev, it, converged = _irls(
            X, y, family, link, theta, tol, max_iter, max_halvings, beta_start=beta
        )
        total += it
        if not converged:
            raise ConvergenceError("negative binomial IRLS did not converge")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", EstimationWarning)
            new_theta = estimate_nb_theta(y, mu, n - p)
        if abs(new_theta - theta) <= 1e-8 * theta:
            theta = new_theta
            for w in caught:
                warnings.warn(w.message, EstimationWarning, stacklevel=3)
            break
        theta = new_theta
    else:
        raise ConvergenceError("alternating theta updates did not converge")
    logger.debug("negative binomial converged: theta=%g after %d outer steps", theta, outer + 1)
    dev = family.deviance(y, mu, theta)
    return GlmFit(
        coefficients=beta,
        family=family.with_theta(theta),
        link=link,
        design_labels=labels,
        deviance=dev,
        iterations=total,
        converged=True,
        fitted=mu,
        dispersion=1.0,
        formula=formula,
    )


def fit_glm(formula, data, family="gaussian", **kwargs) -> GlmFit:
    """Convenience wrapper: parse, build the design and fit."""
    formula = as_formula(formula)
    design = build_design(formula, data)
    y = get_column(data, formula.response)
    return irls_fit(design, y, family, formula=formula, **kwargs)
