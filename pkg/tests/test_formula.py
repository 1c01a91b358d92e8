import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from margeff.errors import DataError, FormulaError
from margeff.formula import build_design, format_formula, parse_formula, parse_linear_predictor


def labels(text):
    return [t.label for t in parse_formula(text).terms]


def test_crossing_expands_to_main_effects_and_interaction():
    f = parse_formula("Y ~ A * X")
    assert f.response == "Y"
    assert labels("Y ~ A * X") == ["A", "X", "A:X"]


def test_additive_formula():
    assert labels("Y ~ A + X") == ["A", "X"]


def test_intercept_only():
    f = parse_formula("Y ~ 1")
    assert f.terms == ()
    assert f.labels == ["(Intercept)"]


def test_three_way_crossing_orders_by_degree():
    assert labels("Y ~ A*B*C") == ["A", "B", "C", "A:B", "A:C", "B:C", "A:B:C"]


def test_colon_binds_tighter_than_star():
    assert labels("Y ~ A:B*C") == ["C", "A:B", "A:B:C"]


def test_duplicate_terms_collapse():
    # the first spelling of an interaction is kept
    assert labels("Y ~ A + X + A + X:A + A:X") == ["A", "X", "X:A"]


def test_transforms_are_labelled():
    assert labels("Y ~ log(X) + sqrt(Z)") == ["log(X)", "sqrt(Z)"]


def test_unknown_transform():
    with pytest.raises(FormulaError) as err:
        parse_formula("Y ~ exp(X)")
    assert err.value.code == "UNKNOWN_FUNCTION"


@pytest.mark.parametrize("text", ["Y ~", "~ X", "Y ~ A +", "Y ~ (A", "Y ~ A $ B", "Y X"])
def test_syntax_errors(text):
    with pytest.raises(FormulaError) as err:
        parse_formula(text)
    assert err.value.code == "FORMULA_SYNTAX"


def test_syntax_error_mentions_position():
    with pytest.raises(FormulaError, match="position"):
        parse_formula("Y ~ A $ B")


def test_self_interaction_collapses():
    assert labels("Y ~ A:A") == ["A"]


def test_interaction_of_column_with_its_transform_rejected():
    with pytest.raises(FormulaError):
        parse_formula("Y ~ A:log(A)")


def test_format_round_trip():
    f = parse_formula("Y ~ A*X")
    assert parse_formula(format_formula(f)) == f


DATA = {"Y": np.array([1.0, 2.0, 3.0]), "A": np.array([0.0, 1.0, 0.0]), "X": np.array([2.0, 4.0, 6.0])}


def test_design_additive():
    d = build_design(parse_formula("Y ~ A + X"), DATA)
    np.testing.assert_array_equal(d.matrix, [[1, 0, 2], [1, 1, 4], [1, 0, 6]])
    assert d.column_labels == ["(Intercept)", "A", "X"]


def test_design_interaction_column():
    d = build_design(parse_formula("Y ~ A * X"), DATA)
    np.testing.assert_array_equal(d.matrix[:, 3], [0, 4, 0])


def test_design_override_recomputes_interactions():
    d = build_design(parse_formula("Y ~ A * X"), DATA, overrides={"A": 1.0})
    np.testing.assert_array_equal(d.matrix[:, 1], [1, 1, 1])
    np.testing.assert_array_equal(d.matrix[:, 3], [2, 4, 6])


def test_design_missing_column():
    with pytest.raises(DataError) as err:
        build_design(parse_formula("Y ~ A + W"), DATA)
    assert err.value.code == "MISSING_COLUMN"


def test_log_of_nonpositive_rejected():
    data = dict(DATA, X=np.array([1.0, 0.0, 2.0]))
    with pytest.raises(DataError) as err:
        build_design(parse_formula("Y ~ log(X)"), data)
    assert err.value.code == "NON_FINITE"


def test_missing_values_rejected():
    data = dict(DATA, X=np.array([1.0, np.nan, 2.0]))
    with pytest.raises(DataError) as err:
        build_design(parse_formula("Y ~ X"), data)
    assert err.value.code == "MISSING_VALUE"


def test_linear_predictor_evaluates():
    expr = parse_linear_predictor("Y ~ b0+b1*log(X)+b2*A")
    assert expr.response == "Y"
    value = expr.evaluate({"b0": 1, "b1": 3, "b2": 2, "X": math.e, "A": 1})
    assert value == pytest.approx(6.0)


def test_linear_predictor_partitions_symbols():
    expr = parse_linear_predictor("b0+b1*log(X)+b2*A")
    coefs, variables = expr.partition({"b0", "b1", "b2"})
    assert coefs == ["b0", "b1", "b2"]
    assert variables == ["X", "A"]


@pytest.mark.parametrize("text", ["b0 + __import__('os')", "b0 + X.real", "b0 + cos(X)", "b0 + [X]", "b0 +* X"])
def test_linear_predictor_rejects_unsafe_or_bad(text):
    with pytest.raises(FormulaError):
        parse_linear_predictor(text)


def test_linear_predictor_unbound_symbol():
    expr = parse_linear_predictor("b0 + b1*X")
    with pytest.raises(FormulaError) as err:
        expr.evaluate({"b0": 1, "X": 2})
    assert err.value.code == "UNBOUND_SYMBOL"


@given(st.lists(st.sampled_from(["A", "B", "C", "D"]), min_size=1, max_size=4, unique=True))
def test_design_has_intercept_and_one_column_per_term(cols):
    rng = np.random.default_rng(0)
    data = {c: rng.normal(size=6) for c in cols}
    data["Y"] = rng.normal(size=6)
    f = parse_formula("Y ~ " + "*".join(cols))
    d = build_design(f, data)
    assert d.matrix.shape == (6, 2 ** len(cols))
    np.testing.assert_array_equal(d.matrix[:, 0], 1.0)
