import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from margeff.errors import ConvergenceError, EstimationWarning, ModelFitError, RankDeficientError, SupportError
from margeff.formula import DesignMatrix
from margeff.glm import Family, estimate_nb_theta, fit_glm, irls_fit, predict_mean
from margeff.simulate import glm_data


def design(X):
    X = np.column_stack([np.ones(len(X)), X])
    return DesignMatrix(X, ["(Intercept)"] + [f"x{j}" for j in range(1, X.shape[1])])


def test_predict_mean_links():
    ident = irls_fit(design(np.arange(5.0)), 1 + 2 * np.arange(5.0), "gaussian")
    assert predict_mean(ident, [1, 3]) == pytest.approx(7.0)
    pois = irls_fit(design(np.array([0, 0, 1, 1.0])), np.array([1, 1, 2, 4.0]), "poisson")
    assert predict_mean(pois, [1, 0]) == pytest.approx(1.0)
    bino = irls_fit(design(np.array([0, 1, 0, 1.0])), np.array([0, 0, 1, 1.0]), "binomial")
    assert predict_mean(bino, [1, 7]) == pytest.approx(0.5)


def test_predict_mean_dimension_mismatch():
    fit = irls_fit(design(np.arange(5.0)), np.arange(5.0), "gaussian")
    with pytest.raises(ModelFitError) as err:
        predict_mean(fit, [1, 2, 3])
    assert err.value.code == "DIMENSION_MISMATCH"


def test_gaussian_matches_lstsq():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 4))
    y = X @ [1, -2, 0.5, 3] + rng.normal(size=200)
    fit = irls_fit(design(X), y, "gaussian")
    ref, *_ = np.linalg.lstsq(design(X).matrix, y, rcond=None)
    np.testing.assert_allclose(fit.coefficients, ref, atol=1e-10)
    assert fit.dispersion == pytest.approx(np.sum((y - design(X).matrix @ ref) ** 2) / 195)


@pytest.mark.parametrize("kind", ["poisson", "binomial", "gamma", "inverse_gaussian"])
def test_score_equation_at_convergence(kind):
    # canonical link with intercept: residuals sum to zero
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1, 2000)
    if kind == "poisson":
        y = rng.poisson(np.exp(0.5 + x)).astype(float)
    elif kind == "binomial":
        y = rng.binomial(1, 1 / (1 + np.exp(-(x - 0.5)))).astype(float)
    elif kind == "gamma":
        y = rng.gamma(2.0, 1 / (1 + x) / 2.0)
    else:
        y = rng.wald(1 / np.sqrt(1 + x), 4.0)
    fit = irls_fit(design(x), y, kind)
    assert abs(np.sum(y - fit.fitted)) <= 1e-6 * len(y)
    assert fit.converged


def test_intercept_only_mles():
    y = np.array([0, 1, 3, 2, 5, 0, 1.0])
    fit = irls_fit(design(np.empty((7, 0))), y, "poisson")
    assert fit.coefficients[0] == pytest.approx(np.log(y.mean()), abs=1e-8)
    b = np.array([0, 1, 1, 0, 1, 1.0])
    fit = irls_fit(design(np.empty((6, 0))), b, "binomial")
    p = b.mean()
    assert fit.coefficients[0] == pytest.approx(np.log(p / (1 - p)), abs=1e-8)


def test_rank_deficient():
    x = np.arange(6.0)
    with pytest.raises(RankDeficientError) as err:
        irls_fit(design(np.column_stack([x, 2 * x])), x, "gaussian")
    assert err.value.code == "RANK_DEFICIENT"


@pytest.mark.parametrize(
    "kind,y",
    [("poisson", [1, -1, 2]), ("binomial", [0, 2, 1]), ("gamma", [1, 0, 2]), ("inverse_gaussian", [1, -2, 3])],
)
def test_response_support(kind, y):
    with pytest.raises(SupportError) as err:
        irls_fit(design(np.array([0, 1, 2.0])), np.array(y, float), kind)
    assert err.value.code == "RESPONSE_SUPPORT"


def test_complete_separation_is_reported():
    x = np.array([-3, -2, -1, 1, 2, 3.0])
    y = np.array([0, 0, 0, 1, 1, 1.0])
    with pytest.raises(ConvergenceError) as err:
        irls_fit(design(x), y, "binomial")
    assert err.value.code == "NON_CONVERGENCE"


def test_nb_theta_unidentifiable():
    mu = np.array([1.0, 2.0, 3.0])
    with pytest.raises(ModelFitError) as err:
        estimate_nb_theta(mu, mu)
    assert err.value.code == "THETA_UNIDENTIFIABLE"


def test_nb_theta_capped_for_poisson_data():
    rng = np.random.default_rng(3)
    mu = np.exp(rng.uniform(0, 2, 10_000))
    y = rng.poisson(mu).astype(float)
    # moment equation solved at the true mean: Poisson data look like theta = infinity
    with pytest.warns(EstimationWarning, match="cap"):
        theta = estimate_nb_theta(y, mu)
    # a finite estimate can occur by chance; only the capped branch warns
    assert theta == 1e3


def test_nb_theta_recovered():
    data = glm_data(
        "Y ~ b0 + b1*X", {"b0": 1.0, "b1": 0.5}, {"X": "uniform(0, 2)"}, "negative_binomial",
        n=10_000, seed=4, nb_theta=2.0,
    )
    fit = fit_glm("Y ~ X", data, "negative_binomial")
    assert 1.7 <= fit.nb_theta <= 2.3
    assert fit.coef()["X"] == pytest.approx(0.5, abs=0.1)


def test_nb_fixed_theta():
    data = glm_data("Y ~ b0 + b1*X", {"b0": 1.0, "b1": 0.5}, {"X": "uniform(0, 2)"}, "negative_binomial", n=2000, seed=5, nb_theta=2.0)
    fit = fit_glm("Y ~ X", data, Family("negative_binomial", nb_theta=2.0))
    assert fit.nb_theta == 2.0


def test_gaussian_dispersion_can_be_fixed():
    data = glm_data("Y ~ b0 + X", {"b0": 1.0}, {"X": "uniform(0, 1)"}, n=50, seed=0)
    assert fit_glm("Y ~ X", data, Family("gaussian", dispersion=1.0)).dispersion == 1.0


def test_predict_uses_formula():
    data = glm_data("Y ~ b0 + b1*A", {"b0": 1.0, "b1": 2.0}, {"A": "bernoulli(0.5)"}, n=200, seed=1)
    fit = fit_glm("Y ~ A", data)
    pred1 = fit.predict(data, {"A": 1.0})
    assert np.allclose(pred1, fit.coefficients.sum())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_gaussian_equals_ols_property(seed, p):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, p))
    y = rng.normal(size=40)
    fit = irls_fit(design(X), y, "gaussian")
    ref, *_ = np.linalg.lstsq(design(X).matrix, y, rcond=None)
    np.testing.assert_allclose(fit.coefficients, ref, atol=1e-8)


def test_deviance_decreases_from_start():
    rng = np.random.default_rng(6)
    x = rng.uniform(0, 1, 500)
    y = rng.poisson(np.exp(1 + 2 * x)).astype(float)
    fam = Family("poisson")
    fit = irls_fit(design(x), y, fam)
    null = fam.deviance(y, np.full_like(y, y.mean()))
    assert fit.deviance < null


def test_no_warnings_on_well_posed_fit():
    rng = np.random.default_rng(7)
    x = rng.uniform(0, 1, 300)
    y = rng.binomial(1, 0.5, 300).astype(float)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        irls_fit(design(x), y, "binomial")
