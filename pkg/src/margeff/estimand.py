"""Marginal-effect functions r(psi1, psi0), their derivatives and inverses."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from .errors import EstimandError, EstimationWarning, MargeffError
from .formula import PredictorExpr, parse_linear_predictor

# cube root of machine epsilon: optimal step for central differences
DERIV_STEP = 6.06e-6

_OR_EPS = 1e-12


@dataclass(frozen=True)
class EstimandSpec:
    """A marginal effect ``r(psi1, psi0)``.

    ``d0``/``d1`` are the partial derivatives in psi0 and psi1, and
    ``inverse_in_psi1(target, psi0)`` solves ``r(psi1, psi0) = target``.
    Any of them may be ``None``, in which case numerical approximations are
    used.
    """

    name: str
    r: Callable[[float, float], float]
    d0: Optional[Callable[[float, float], float]] = None
    d1: Optional[Callable[[float, float], float]] = None
    inverse_in_psi1: Optional[Callable[[float, float], float]] = None
    null_margin: Optional[float] = None

    def __call__(self, psi1, psi0) -> float:
        return float(self.r(psi1, psi0))

    @property
    def margin(self) -> float:
        if self.null_margin is not None:
            return float(self.null_margin)
        return self(1.0, 1.0)

    def derivatives(self, psi1: float, psi0: float) -> tuple[float, float]:
        """(d r / d psi0, d r / d psi1) at the given point, warning on sign violations."""
        if self.d0 is None or self.d1 is None:
            n0, n1 = numeric_derivatives(self, psi1, psi0)
        d0 = float(self.d0(psi1, psi0)) if self.d0 is not None else n0
        d1 = float(self.d1(psi1, psi0)) if self.d1 is not None else n1
        if not (math.isfinite(d0) and math.isfinite(d1)):
            raise EstimandError(f"non-finite derivative of {self.name} at ({psi1}, {psi0})", code="NON_FINITE")
        if d0 > 0 or d1 < 0:
            warnings.warn(
                f"estimand {self.name} violates the monotonicity condition "
                f"(d0={d0:.4g} should be <= 0, d1={d1:.4g} should be >= 0)",
                EstimationWarning,
                stacklevel=2,
            )
        return d0, d1


def _odds(p):
    if p <= 0 or p >= 1:
        warnings.warn(f"odds ratio mean {p} clamped into (0, 1)", EstimationWarning, stacklevel=3)
        p = min(max(p, _OR_EPS), 1 - _OR_EPS)
    return p, p / (1 - p)


def _or(psi1, psi0):
    psi1, o1 = _odds(psi1)
    psi0, o0 = _odds(psi0)
    return o1 / o0


def _or_d0(psi1, psi0):
    psi1, o1 = _odds(psi1)
    psi0, o0 = _odds(psi0)
    return -o1 / (o0 * psi0 * (1 - psi0))


def _or_d1(psi1, psi0):
    psi1, o1 = _odds(psi1)
    psi0, o0 = _odds(psi0)
    return 1 / ((1 - psi1) ** 2 * o0)


def _or_inverse(target, psi0):
    psi0, q = _odds(psi0)
    return target * q / (1 + target * q)


BUILTINS = {
    "ate": EstimandSpec(
        "ate",
        lambda psi1, psi0: psi1 - psi0,
        d0=lambda psi1, psi0: -1.0,
        d1=lambda psi1, psi0: 1.0,
        inverse_in_psi1=lambda t, psi0: t + psi0,
        null_margin=0.0,
    ),
    "rate_ratio": EstimandSpec(
        "rate_ratio",
        lambda psi1, psi0: psi1 / psi0,
        d0=lambda psi1, psi0: -psi1 / psi0**2,
        d1=lambda psi1, psi0: 1.0 / psi0,
        inverse_in_psi1=lambda t, psi0: t * psi0,
        null_margin=1.0,
    ),
    "odds_ratio": EstimandSpec(
        "odds_ratio",
        _or,
        d0=_or_d0,
        d1=_or_d1,
        inverse_in_psi1=_or_inverse,
        null_margin=1.0,
    ),
}


def builtin(name: str) -> EstimandSpec:
    try:
        return BUILTINS[name]
    except KeyError:
        raise EstimandError(
            f"unknown estimand {name!r}; choose from {', '.join(BUILTINS)}", code="UNKNOWN_ESTIMAND"
        ) from None


def from_expression(text: str, margin: float | None = None) -> EstimandSpec:
    """Custom estimand from an arithmetic expression in ``psi1`` and ``psi0``."""
    expr: PredictorExpr = parse_linear_predictor(text)
    extra = set(expr.symbols) - {"psi1", "psi0"}
    if extra:
        raise EstimandError(
            f"estimand expression may only use psi1 and psi0, found {', '.join(sorted(extra))}",
            code="UNKNOWN_SYMBOL",
        )

    def r(psi1, psi0):
        return float(expr.evaluate({"psi1": psi1, "psi0": psi0}))

    return EstimandSpec(expr.text, r, null_margin=margin)


def as_estimand(estimand) -> EstimandSpec:
    if isinstance(estimand, EstimandSpec):
        return estimand
    if estimand in BUILTINS:
        return BUILTINS[estimand]
    if callable(estimand):
        return EstimandSpec(getattr(estimand, "__name__", "custom"), estimand)
    if isinstance(estimand, str) and ("psi1" in estimand or "psi0" in estimand):
        return from_expression(estimand)
    return builtin(estimand)


def numeric_derivatives(spec: EstimandSpec, psi1: float, psi0: float) -> tuple[float, float]:
    """Central finite differences of r in (psi0, psi1)."""

    def f(a, b):
        try:
            value = spec.r(a, b)
        except Exception as exc:
            raise EstimandError(f"estimand not evaluable near ({psi1}, {psi0}): {exc}", code="NON_FINITE") from None
        if not math.isfinite(value):
            raise EstimandError(f"estimand non-finite near ({psi1}, {psi0})", code="NON_FINITE")
        return value

    h0 = max(1.0, abs(psi0)) * DERIV_STEP
    h1 = max(1.0, abs(psi1)) * DERIV_STEP
    d0 = (f(psi1, psi0 + h0) - f(psi1, psi0 - h0)) / (2 * h0)
    d1 = (f(psi1 + h1, psi0) - f(psi1 - h1, psi0)) / (2 * h1)
    return d0, d1


def _within(value, target, tolerance):
    return abs(value - target) <= tolerance * max(1.0, abs(target))


def solve_psi1(spec: EstimandSpec, target: float, psi0: float, tolerance: float = 1e-6) -> float:
    """Find psi1 with ``r(psi1, psi0) = target``.

    Uses the estimand's closed-form inverse when available; otherwise expands a bracket
    geometrically around psi0 and root-finds inside it. Either way the
    residual is checked against ``tolerance`` (relative to ``max(1, |target|)``).
    """
    if spec.inverse_in_psi1 is not None:
        psi1 = float(spec.inverse_in_psi1(target, psi0))
        if not _within(spec(psi1, psi0), target, tolerance):
            raise EstimandError(
                f"inverse of {spec.name} failed the residual check at target {target}", code="INVERSION_FAILED"
            )
        return psi1

    def f(psi1):
        try:
            # a clamping warning means psi1 left the domain of r
            with warnings.catch_warnings():
                warnings.simplefilter("error", EstimationWarning)
                value = spec.r(psi1, psi0)
        except (ArithmeticError, ValueError, MargeffError, EstimationWarning):
            return math.nan
        return value - target if math.isfinite(value) else math.nan

    f0 = f(psi0)
    if f0 == 0:
        return float(psi0)
    if math.isnan(f0):
        raise EstimandError(f"{spec.name} is not finite at psi1 = psi0 = {psi0}", code="INVERSION_FAILED")
    direction = 1.0 if f0 < 0 else -1.0
    step = max(1.0, abs(psi0)) * 1e-3
    near = far = float(psi0)
    doublings = 0
    for _ in range(200):
        far = near + direction * step
        fv = f(far)
        if math.isnan(fv):
            # stepped outside the domain of r
            step /= 2
            continue
        if np.sign(fv) != np.sign(f0):
            break
        near = far
        step *= 2
        doublings += 1
        if doublings > 60:
            break
    else:
        doublings = 61
    if doublings > 60 or math.isnan(f(far)) or np.sign(f(far)) == np.sign(f0):
        raise EstimandError(
            f"could not bracket psi1 for target {target} of {spec.name}", code="INVERSION_FAILED"
        )
    lo, hi = sorted((near, far))
    psi1 = optimize.brentq(f, lo, hi, xtol=1e-14 * max(1.0, abs(psi0)), rtol=4 * np.finfo(float).eps, maxiter=500)
    if not _within(spec(psi1, psi0), target, tolerance):
        raise EstimandError(
            f"numeric inversion of {spec.name} did not reach target {target} within tolerance {tolerance}",
            code="INVERSION_FAILED",
        )
    return float(psi1)
