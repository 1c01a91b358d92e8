import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from margeff.errors import PowerError
from margeff.estimand import builtin
from margeff.glm import fit_glm
from margeff.learners import LearnerSpec, fit_best_learner
from margeff.plugin import estimate_marginal_effect
from margeff.power import (
    PowerInputs,
    estimate_nuisances,
    find_samplesize,
    power_marginaleffect,
    repeat_power_curve,
    samplesize_for_power,
    variance_bound,
)
from margeff.rng import stream
from margeff.simulate import glm_data


def inputs(sigma_sq=1.0, kappa_sq=1.0, target=0.8, margin=0.0, alpha=0.05, pi=0.5, n=100):
    return PowerInputs(
        target_effect=target, exposure_prob=pi, margin=margin, alpha=alpha, estimand=builtin("ate"),
        psi0=0.0, psi1=target, d0=-1.0, d1=1.0, sigma0_sq=sigma_sq, sigma1_sq=sigma_sq,
        kappa0_sq=kappa_sq, kappa1_sq=kappa_sq, samplesize=n,
    )


def oracle_n(v, effect, alpha, power):
    z = stats.norm.isf(alpha / 2) + stats.norm.ppf(power)
    return math.ceil(v * z**2 / effect**2)


def hist(n, seed):
    return glm_data("Y ~ b0+b1*log(X)", {"b0": 1, "b1": 3}, {"X": "uniform(1,50)"}, n=n, seed=seed)


def test_nuisances_two_points():
    assert estimate_nuisances([0, 2], [1, 1]) == pytest.approx((2.0, 1.0, 1.0))


def test_nuisances_perfect_predictions():
    y = np.array([1.0, 4.0, 2.0])
    assert estimate_nuisances(y, y)[1] == 0


def test_nuisances_centered_identity():
    y = np.random.default_rng(0).normal(size=25)
    s2, k2, _ = estimate_nuisances(y, np.full(25, y.mean()))
    assert k2 == pytest.approx(s2 * 24 / 25)


def test_nuisances_need_data():
    with pytest.raises(PowerError):
        estimate_nuisances([], [])
    with pytest.raises(PowerError):
        estimate_nuisances([1.0, 2.0], [1.0])


def test_variance_bound_examples():
    assert variance_bound(-1, 1, 1, 1, 0, 0, 0.5) == 2
    assert variance_bound(-1, 1, 1, 1, 1, 1, 0.5) == 6


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0.05, 0.95))
def test_variance_bound_monotone_in_kappa(sigma_sq, kappa_sq, pi):
    assert variance_bound(-1, 1, sigma_sq, sigma_sq, 0.5 * kappa_sq, 0.5 * kappa_sq, pi) <= variance_bound(
        -1, 1, sigma_sq, sigma_sq, kappa_sq, kappa_sq, pi
    )


def test_power_at_margin_is_half_alpha():
    assert inputs(target=0.3, margin=0.3).power(57) == 0.025


def test_samplesize_oracle_example():
    assert inputs().variance_bound == 6
    assert oracle_n(6, 0.8, 0.05, 0.9) == 99
    assert find_samplesize(inputs(), 0.9) == 99


def test_samplesize_halves_with_variance():
    full = find_samplesize(inputs(sigma_sq=2.0, kappa_sq=2.0), 0.85)
    half = find_samplesize(inputs(sigma_sq=1.0, kappa_sq=1.0), 0.85)
    assert abs(half - math.ceil(full / 2)) <= 1


def test_samplesize_near_boundary_terminates():
    n = find_samplesize(inputs(target=1e-4), 0.025 + 1e-6)
    assert n >= 1


def test_samplesize_errors():
    with pytest.raises(PowerError) as err:
        find_samplesize(inputs(target=0.0), 0.8)
    assert err.value.code == "EFFECT_NOT_BEYOND_MARGIN"
    with pytest.raises(PowerError) as err:
        find_samplesize(inputs(), 0.01)
    assert err.value.code == "BAD_POWER"


def test_power_increasing_in_n():
    p = [inputs().power(n) for n in range(1, 400, 7)]
    assert all(b > a for a, b in zip(p, p[1:]))


def test_power_shift_invariant_for_ate():
    data = hist(100, 3)
    y, pred = data["Y"], 1 + 3 * np.log(data["X"])
    a = power_marginaleffect(y, pred, 1.3, 0.5).power
    b = power_marginaleffect(y + 50, pred + 50, 1.3, 0.5).power
    assert a == pytest.approx(b, rel=1e-12)


def test_default_samplesize_is_length_of_response():
    data = hist(100, 3)
    res = power_marginaleffect(data["Y"], data["X"], 1.3, 0.5)
    assert res.samplesize == 100


def test_arm1_overrides():
    data = hist(100, 3)
    y, pred = data["Y"], 1 + 3 * np.log(data["X"])
    base = power_marginaleffect(y, pred, 1.3, 0.5)
    scaled = power_marginaleffect(y, pred, 1.3, 0.5, var1=lambda v: 1.2 * v, kappa1_squared=2.0)
    assert scaled.sigma1_sq == pytest.approx(1.2 * base.sigma0_sq)
    assert scaled.kappa1_sq == 2.0
    assert base.sigma1_sq == base.sigma0_sq and base.kappa1_sq == base.kappa0_sq


def test_margin_above_target_gives_low_power():
    # shape of the reported run with var1 = 1.2 var0, kappa1^2 = 2, margin 1, target 1.3
    data = hist(100, 3)
    y, pred = data["Y"], 1 + 3 * np.log(data["X"])
    res = power_marginaleffect(y, pred, 1.3, 0.5, var1=lambda v: 1.2 * v, kappa1_squared=2.0, margin=1.0)
    assert 0.025 < res.power < 0.2


def test_better_predictions_give_more_power():
    # the reported ordering: prognostic predictions 0.8512, plain GLM 0.8108
    train = hist(1000, 1)
    test = hist(100, 2)
    glm = fit_glm("Y ~ X", train)
    knn = fit_best_learner("Y ~ X", train, learners=[LearnerSpec("knn", "knn", ({"k": 25},))])
    p_glm = power_marginaleffect(test["Y"], glm.predict(test), 1.3, 0.5).power
    p_knn = power_marginaleffect(test["Y"], knn.predict(test), 1.3, 0.5).power
    assert p_knn > p_glm
    assert 0.5 < p_glm < 1 and 0.5 < p_knn < 1


def test_rate_ratio_power_uses_numeric_psi1():
    y = np.random.default_rng(1).poisson(5.0, 200).astype(float)
    res = power_marginaleffect(y, np.full(200, 5.0), 1.5, 0.5, estimand="rate_ratio")
    assert res.psi1 == pytest.approx(1.5 * y.mean())
    assert res.margin == 1.0


def test_samplesize_for_power_reaches_target():
    data = hist(200, 4)
    pred = 1 + 3 * np.log(data["X"])
    n = samplesize_for_power(data["Y"], pred, 0.8, 0.5, 0.9, margin=-0.2)
    assert power_marginaleffect(data["Y"], pred, 0.8, 0.5, margin=-0.2, samplesize=n).power >= 0.9
    assert power_marginaleffect(data["Y"], pred, 0.8, 0.5, margin=-0.2, samplesize=n - 1).power < 0.9


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 20), st.floats(0.1, 2), st.sampled_from([0.01, 0.05, 0.1]), st.floats(0.6, 0.95))
def test_samplesize_matches_closed_form(v_half, effect, alpha, power):
    inp = inputs(sigma_sq=v_half, kappa_sq=0.0, target=effect, alpha=alpha)
    assert abs(find_samplesize(inp, power) - oracle_n(inp.variance_bound, effect, alpha, power)) <= 1


def test_bound_dominates_empirical_variance():
    # kappa^2 = residual variance of the true conditional mean (1); sigma^2 = 9 Var(log X) + 1
    e1 = (50 * math.log(50) - 49) / 49
    e2 = (50 * (math.log(50) ** 2 - 2 * math.log(50) + 2) - 2) / 49
    sigma_sq = 9 * (e2 - e1**2) + 1
    bound = variance_bound(-1, 1, sigma_sq, sigma_sq, 1.0, 1.0, 0.5)
    n = 500
    est = []
    for rep in range(1000):
        data = glm_data(
            "Y ~ b0+b1*log(X)+b2*A", {"b0": 1, "b1": 3, "b2": 2},
            {"X": "uniform(1,50)", "A": "bernoulli(0.5)"}, n=n, seed=20_000 + rep,
        )
        est.append(estimate_marginal_effect("Y ~ A + X", data, exposure="A", exposure_prob=0.5).estimate)
    assert bound >= n * np.var(est, ddof=1)


def test_single_point_curve_equals_direct_call():
    model = fit_glm("Y ~ X", hist(500, 1))

    def gen(n, rng):
        return hist(n, int(rng.integers(1 << 30)))

    table = repeat_power_curve({"glm": model}, gen, [100], 1, 0.8, 0.5, seed=3)
    data = gen(100, stream(3, "power_curve", 0, 0))
    direct = power_marginaleffect(data["Y"], model.predict(data), 0.8, 0.5, samplesize=100).power
    assert len(table.rows) == 1
    assert table.rows[0]["mean_power"] == pytest.approx(direct, rel=1e-15)


def test_curve_is_nearly_monotone_after_averaging():
    model = fit_glm("Y ~ X", hist(1000, 1))
    table = repeat_power_curve(
        {"glm": model}, lambda n, rng: hist(n, int(rng.integers(1 << 30))), list(range(10, 310, 10)), 30, 0.8, 0.5,
        margin=-0.2, var1=lambda v: 1.1 * v, kappa1_squared=lambda k: 1.1 * k,
    )
    _, power = table.curve("glm")
    assert np.all(np.diff(power) >= -0.02)


def test_curve_outputs():
    model = fit_glm("Y ~ X", hist(300, 1))
    table = repeat_power_curve({"glm": model}, lambda n: hist(n, n), [20, 40], 2, 0.8, 0.5)
    csv = table.to_csv().splitlines()
    assert csv[0] == "model,n,mean_power,mc_se"
    assert len(csv) == 3
    svg = table.to_svg()
    assert svg.startswith("<svg") and "stroke-dasharray" in svg


def test_curve_argument_checks():
    with pytest.raises(PowerError):
        repeat_power_curve({}, lambda n: None, [20, 10], 1, 0.8, 0.5)
    with pytest.raises(PowerError) as err:
        repeat_power_curve({"bad": lambda d: 1 / 0}, lambda n: hist(n, 0), [20], 1, 0.8, 0.5)
    assert err.value.code == "PREDICTION_FAILED"
