"""Prospective power for plug-in marginal-effect analyses.

Power is approximated from historical control outcomes and predictions of
the planned analysis model through a variance bound that stays valid when
the analysis model is misspecified.
"""

from __future__ import annotations

import csv
import inspect
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import PowerError
from .estimand import EstimandSpec, as_estimand, solve_psi1
from .formula import get_column
from .rng import stream

logger = logging.getLogger(__name__)


def estimate_nuisances(response, predictions) -> tuple[float, float, float]:
    """Return ``(sigma0_sq, kappa0_sq, psi0)`` from control outcomes and model predictions.

    ``sigma0_sq`` is the sample variance of the outcomes (divisor n-1) and
    ``kappa0_sq`` the mean squared prediction error.
    """
    y = np.asarray(response, dtype=float)
    pred = np.asarray(predictions, dtype=float)
    if y.size == 0:
        raise PowerError("response is empty", code="EMPTY_INPUT")
    if y.shape != pred.shape:
        raise PowerError("response and predictions differ in length", code="DIMENSION_MISMATCH")
    if y.size < 2:
        raise PowerError("need at least two responses to estimate a variance", code="EMPTY_INPUT")
    return float(np.var(y, ddof=1)), float(np.mean((y - pred) ** 2)), float(np.mean(y))


def variance_bound(d0, d1, sigma0_sq, sigma1_sq, kappa0_sq, kappa1_sq, pi1) -> float:
    """Conservative asymptotic variance of the plug-in estimator."""
    if min(sigma0_sq, sigma1_sq, kappa0_sq, kappa1_sq) < 0:
        raise PowerError("variances and mean squared errors must be non-negative")
    if not 0 < pi1 < 1:
        raise PowerError("exposure_prob must lie strictly between 0 and 1")
    pi0 = 1 - pi1
    cross = abs(d0) * math.sqrt(kappa0_sq) / pi0 + abs(d1) * math.sqrt(kappa1_sq) / pi1
    return d0**2 * sigma0_sq + d1**2 * sigma1_sq + pi0 * pi1 * cross**2


def _resolve_arm1(value, control: float, what: str) -> float:
    if value is None:
        return control
    if callable(value):
        out = float(value(control))
    else:
        out = float(value)
    if not math.isfinite(out) or out < 0:
        raise PowerError(f"{what} must be a finite non-negative number, got {out}")
    return out


@dataclass(frozen=True)
class PowerInputs:
    """Resolved ingredients of a power calculation.

    Build with :meth:`from_data`; :meth:`power` then evaluates power at any
    total sample size.
    """

    target_effect: float
    exposure_prob: float
    margin: float
    alpha: float
    estimand: EstimandSpec = field(repr=False)
    psi0: float
    psi1: float
    d0: float
    d1: float
    sigma0_sq: float
    sigma1_sq: float
    kappa0_sq: float
    kappa1_sq: float
    samplesize: int

    @classmethod
    def from_data(
        cls,
        response,
        predictions,
        target_effect: float,
        exposure_prob: float,
        var1=None,
        kappa1_squared=None,
        estimand="ate",
        margin: float | None = None,
        alpha: float = 0.05,
        samplesize: int | None = None,
        tolerance: float = 1e-6,
    ) -> PowerInputs:
        if not 0 < exposure_prob < 1:
            raise PowerError("exposure_prob must lie strictly between 0 and 1", code="BAD_EXPOSURE_PROB")
        if not 0 < alpha < 1:
            raise PowerError("alpha must lie strictly between 0 and 1", code="BAD_ALPHA")
        estimand = as_estimand(estimand)
        sigma0_sq, kappa0_sq, psi0 = estimate_nuisances(response, predictions)
        psi1 = solve_psi1(estimand, target_effect, psi0, tolerance)
        d0, d1 = estimand.derivatives(psi1, psi0)
        n = len(np.asarray(response)) if samplesize is None else int(samplesize)
        if n < 1:
            raise PowerError("samplesize must be positive", code="BAD_SAMPLESIZE")
        return cls(
            target_effect=float(target_effect),
            exposure_prob=float(exposure_prob),
            margin=estimand.margin if margin is None else float(margin),
            alpha=float(alpha),
            estimand=estimand,
            psi0=psi0,
            psi1=psi1,
            d0=d0,
            d1=d1,
            sigma0_sq=sigma0_sq,
            sigma1_sq=_resolve_arm1(var1, sigma0_sq, "var1"),
            kappa0_sq=kappa0_sq,
            kappa1_sq=_resolve_arm1(kappa1_squared, kappa0_sq, "kappa1_squared"),
            samplesize=n,
        )

    @property
    def variance_bound(self) -> float:
        return variance_bound(
            self.d0, self.d1, self.sigma0_sq, self.sigma1_sq, self.kappa0_sq, self.kappa1_sq, self.exposure_prob
        )

    def power(self, n: int | None = None) -> float:
        n = self.samplesize if n is None else n
        sd = math.sqrt(self.variance_bound / n)
        if sd == 0:
            if self.target_effect == self.margin:
                return self.alpha / 2
            return 1.0 if self.target_effect > self.margin else 0.0
        shift = (self.margin - self.target_effect) / sd
        if shift == 0:
            # F1 = F0, so 1 - F1(F0^-1(1 - alpha/2)) is alpha/2 by identity;
            # the quantile/cdf round trip would lose the last few bits
            return self.alpha / 2
        z = stats.norm.isf(self.alpha / 2)
        # 1 - F1(F0^-1(1 - alpha/2)) with F0 = N(margin, sd^2), F1 = N(target, sd^2)
        return float(stats.norm.sf(z + shift))


@dataclass(frozen=True)
class PowerResult:
    power: float
    samplesize: int
    target_effect: float
    exposure_prob: float
    margin: float
    alpha: float
    sigma0_sq: float
    sigma1_sq: float
    kappa0_sq: float
    kappa1_sq: float
    variance_bound: float
    psi0: float
    psi1: float
    d0: float
    d1: float
    estimand_name: str = "ate"

    def __float__(self):
        return self.power

    def to_dict(self) -> dict:
        return asdict(self)


def _result(inputs: PowerInputs, n: int) -> PowerResult:
    return PowerResult(
        power=inputs.power(n),
        samplesize=int(n),
        target_effect=inputs.target_effect,
        exposure_prob=inputs.exposure_prob,
        margin=inputs.margin,
        alpha=inputs.alpha,
        sigma0_sq=inputs.sigma0_sq,
        sigma1_sq=inputs.sigma1_sq,
        kappa0_sq=inputs.kappa0_sq,
        kappa1_sq=inputs.kappa1_sq,
        variance_bound=inputs.variance_bound,
        psi0=inputs.psi0,
        psi1=inputs.psi1,
        d0=inputs.d0,
        d1=inputs.d1,
        estimand_name=inputs.estimand.name,
    )


def power_marginaleffect(response, predictions, target_effect, exposure_prob, **options) -> PowerResult:
    """Approximate power of the plug-in analysis at a total sample size.

    Parameters
    ----------
    response : array_like
        Historical control outcomes, standing in for Y(0).
    predictions : array_like
        Predictions of ``response`` from the planned analysis model (or from
        the prognostic model when the analysis adjusts for a prognostic score).
    target_effect : float
        Effect size on the estimand scale to detect.
    exposure_prob : float
        Randomization probability of the treatment arm.
    **options
        ``var1`` and ``kappa1_squared`` (None to copy the control value, a
        number, or a function of the control value), ``estimand``,
        ``margin`` (default: the estimand's no-effect value), ``alpha``
        (default 0.05), ``samplesize`` (default ``len(response)``) and
        ``tolerance`` for the psi1 inversion.
    """
    inputs = PowerInputs.from_data(response, predictions, target_effect, exposure_prob, **options)
    return _result(inputs, inputs.samplesize)


def samplesize_for_power(response, predictions, target_effect, exposure_prob, desired_power: float = 0.8, **options) -> int:
    """Smallest total sample size whose approximate power reaches ``desired_power``."""
    options.pop("samplesize", None)
    inputs = PowerInputs.from_data(response, predictions, target_effect, exposure_prob, **options)
    return find_samplesize(inputs, desired_power)


def find_samplesize(inputs: PowerInputs, desired_power: float, max_n: int = 2**62) -> int:
    """Doubling then bisection on the (monotone) power curve."""
    if not inputs.alpha / 2 < desired_power < 1:
        raise PowerError("desired_power must lie in (alpha/2, 1)", code="BAD_POWER")
    if not inputs.target_effect > inputs.margin:
        raise PowerError(
            "target effect does not exceed the margin; power cannot grow with n", code="EFFECT_NOT_BEYOND_MARGIN"
        )
    lo, hi = 0, 1
    p_prev = inputs.power(1)
    while p_prev < desired_power:
        lo, hi = hi, hi * 2
        if hi > max_n:
            raise PowerError("sample size search exceeded the maximum", code="SEARCH_FAILED")
        p = inputs.power(hi)
        if p <= p_prev and p < 1.0:
            raise PowerError("power is not increasing in n", code="NON_MONOTONE_POWER")
        p_prev = p
    # invariant: power(lo) < desired <= power(hi), with power(0) taken as 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if inputs.power(mid) >= desired_power:
            hi = mid
        else:
            lo = mid
    return hi


# --- power curves -------------------------------------------------------------


@dataclass
class PowerCurveTable:
    rows: list[dict]
    desired_power: float
    reached: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["model", "n", "mean_power", "mc_se"])
        for row in self.rows:
            writer.writerow([row["model"], row["n"], repr(row["mean_power"]), repr(row["mc_se"])])
        return buf.getvalue()

    def models(self) -> list[str]:
        return list(dict.fromkeys(r["model"] for r in self.rows))

    def curve(self, model) -> tuple[np.ndarray, np.ndarray]:
        rows = [r for r in self.rows if r["model"] == model]
        return np.array([r["n"] for r in rows]), np.array([r["mean_power"] for r in rows])

    def to_svg(self, width: int = 640, height: int = 400) -> str:
        return power_curve_svg(self, width, height)


def _predictor(model) -> Callable:
    if callable(model) and not hasattr(model, "predict"):
        return model
    return model.predict


def _call_generator(generator, n, rng):
    try:
        n_params = len(inspect.signature(generator).parameters)
    except (TypeError, ValueError):
        n_params = 2
    return generator(n, rng) if n_params >= 2 else generator(n)


def repeat_power_curve(
    model_list: Mapping[str, object],
    test_data_generator: Callable,
    ns: Sequence[int],
    n_iter: int,
    target_effect: float,
    exposure_prob: float,
    desired_power: float = 0.9,
    response: str = "Y",
    seed=0,
    **power_options,
) -> PowerCurveTable:
    """Average approximate power over freshly generated test sets, per model and n.

    ``model_list`` maps names to fitted models (anything with ``predict(data)``)
    or plain callables ``data -> predictions``. ``test_data_generator`` is
    called as ``generator(n, rng)`` (or ``generator(n)``) and must return a
    dataset with the ``response`` column. Every model sees the same test set
    within an iteration.
    """
    ns = [int(n) for n in ns]
    if not ns:
        raise PowerError("ns must be non-empty", code="BAD_NS")
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise PowerError("ns must be strictly increasing", code="BAD_NS")
    if n_iter < 1:
        raise PowerError("n_iter must be at least 1", code="BAD_NITER")
    names = list(model_list)
    predictors = {name: _predictor(model_list[name]) for name in names}
    powers = {name: np.empty((len(ns), n_iter)) for name in names}

    for i, n in enumerate(ns):
        for it in range(n_iter):
            data = _call_generator(test_data_generator, n, stream(seed, "power_curve", i, it))
            y = get_column(data, response)
            for name in names:
                try:
                    preds = np.asarray(predictors[name](data), dtype=float)
                except Exception as exc:
                    raise PowerError(f"model {name!r} failed to predict: {exc}", code="PREDICTION_FAILED") from exc
                res = power_marginaleffect(
                    y, preds, target_effect, exposure_prob, samplesize=n, **power_options
                )
                powers[name][i, it] = res.power

    rows = []
    reached = {}
    for name in names:
        mean = powers[name].mean(axis=1)
        se = powers[name].std(axis=1, ddof=1) / math.sqrt(n_iter) if n_iter > 1 else np.zeros(len(ns))
        for n, m, s in zip(ns, mean, se):
            rows.append({"model": name, "n": n, "mean_power": float(m), "mc_se": float(s)})
        hit = np.flatnonzero(mean >= desired_power)
        reached[name] = ns[hit[0]] if hit.size else None
        logger.info("model %s reaches power %.2f at n=%s", name, desired_power, reached[name])
    return PowerCurveTable(rows, desired_power, reached)


def power_curve_svg(table: PowerCurveTable, width: int = 640, height: int = 400) -> str:
    """Line plot of mean power against n with a rule at the desired power."""
    left, right, top, bottom = 60, 150, 20, 50
    pw, ph = width - left - right, height - top - bottom
    all_n = [r["n"] for r in table.rows]
    n_min, n_max = min(all_n), max(all_n)
    span = max(n_max - n_min, 1)

    def sx(n):
        return left + (n - n_min) / span * pw

    def sy(p):
        return top + (1 - p) * ph

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for p in (0.0, 0.25, 0.5, 0.75, 1.0):
        out.append(f'<text x="{left - 8}" y="{sy(p) + 4:.1f}" font-size="11" text-anchor="end">{p:.2f}</text>')
    for k in range(6):
        n = n_min + span * k / 5
        out.append(f'<text x="{sx(n):.1f}" y="{top + ph + 16}" font-size="11" text-anchor="middle">{n:.0f}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" font-size="12" text-anchor="middle">Total sample size</text>')
    out.append(
        f'<text x="15" y="{top + ph / 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 15 {top + ph / 2})">Estimated power</text>'
    )
    y_rule = sy(table.desired_power)
    out.append(
        f'<line x1="{left}" y1="{y_rule:.1f}" x2="{left + pw}" y2="{y_rule:.1f}" stroke="grey" stroke-dasharray="4 3"/>'
    )
    for j, model in enumerate(table.models()):
        color = colors[j % len(colors)]
        xs, ys = table.curve(model)
        pts = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 15 + 18 * j
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        label = str(model).replace("&", "&amp;").replace("<", "&lt;")
        out.append(f'<text x="{left + pw + 35}" y="{ly + 4}" font-size="11">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
