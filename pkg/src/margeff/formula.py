"""Model formulas, design matrices and arithmetic expressions.

Two small languages live here. Model formulas follow the familiar
``response ~ term + term`` notation with ``a*b`` crossing, ``a:b`` pure
interaction and ``log``/``sqrt`` transforms on single columns.  Arithmetic
expressions (linear predictors for simulation, custom estimand functions) are
parsed with the standard library ``ast`` module and restricted to a whitelist
of node types.
"""

from __future__ import annotations

import ast
import itertools
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, FormulaError

TRANSFORMS = {
    "identity": lambda x: x,
    "log": np.log,
    "sqrt": np.sqrt,
}

INTERCEPT_LABEL = "(Intercept)"


@dataclass(frozen=True)
class Factor:
    column: str
    transform: str = "identity"

    @property
    def label(self) -> str:
        if self.transform == "identity":
            return self.column
        return f"{self.transform}({self.column})"

    def evaluate(self, values: np.ndarray) -> np.ndarray:
        if self.transform == "identity":
            return values
        if np.any(values <= 0):
            raise DataError(
                f"{self.label}: transform argument must be strictly positive",
                code="NON_FINITE",
            )
        return TRANSFORMS[self.transform](values)


@dataclass(frozen=True)
class Term:
    factors: tuple[Factor, ...]

    @property
    def label(self) -> str:
        return ":".join(f.label for f in self.factors)

    @property
    def is_interaction(self) -> bool:
        return len(self.factors) > 1

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(f.column for f in self.factors)

    def key(self) -> frozenset:
        return frozenset(self.factors)


@dataclass(frozen=True)
class Formula:
    """Parsed model formula. Terms are stored in design-matrix order."""

    response: str
    terms: tuple[Term, ...] = ()

    def __post_init__(self):
        if not self.response:
            raise FormulaError("response name must be non-empty")
        for term in self.terms:
            if self.response in term.columns:
                raise FormulaError(
                    f"response {self.response!r} also appears on the right-hand side"
                )

    @property
    def columns(self) -> list[str]:
        """Covariate columns referenced by the terms, in order of first appearance."""
        seen: dict[str, None] = {}
        for term in self.terms:
            for col in term.columns:
                seen.setdefault(col, None)
        return list(seen)

    @property
    def labels(self) -> list[str]:
        return [INTERCEPT_LABEL] + [t.label for t in self.terms]

    def add_terms(self, *terms: Term) -> Formula:
        return Formula(self.response, _order_terms(list(self.terms) + list(terms)))

    def __str__(self) -> str:
        return format_formula(self)


@dataclass(frozen=True)
class DesignMatrix:
    matrix: np.ndarray
    column_labels: list[str]
    intercept_index: int = 0

    @property
    def shape(self):
        return self.matrix.shape


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<name>[A-Za-z_.][A-Za-z0-9_.]*)|(?P<number>\d+(?:\.\d*)?)|(?P<op>[~+*:()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise FormulaError(f"unexpected character {text[pos]!r} at position {pos}")
        kind = m.lastgroup
        value = m.group(kind)
        tokens.append((kind, value, m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _FormulaParser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self, kind=None, value=None):
        tok = self.tokens[self.i]
        if (kind and tok[0] != kind) or (value and tok[1] != value):
            want = value or kind
            got = tok[1] or "end of input"
            raise FormulaError(f"expected {want!r} but found {got!r} at position {tok[2]}")
        self.i += 1
        return tok

    def parse(self) -> Formula:
        response = self.take("name")[1]
        self.take("op", "~")
        terms: list[Term] = []
        while True:
            terms.extend(self.product())
            if self.peek()[1] == "+":
                self.take()
                continue
            break
        tok = self.peek()
        if tok[0] != "end":
            raise FormulaError(f"unexpected {tok[1]!r} at position {tok[2]}")
        return Formula(response, _order_terms(terms))

    def product(self) -> list[Term]:
        groups = [self.interaction()]
        while self.peek()[1] == "*":
            self.take()
            groups.append(self.interaction())
        if any(g is None for g in groups):
            if len(groups) > 1:
                raise FormulaError(f"intercept '1' cannot be crossed in {self.text!r}")
            return []
        out = []
        for size in range(1, len(groups) + 1):
            for combo in itertools.combinations(groups, size):
                factors = tuple(f for g in combo for f in g)
                out.append(_make_term(factors))
        return out

    def interaction(self):
        atoms = [self.atom()]
        while self.peek()[1] == ":":
            self.take()
            atoms.append(self.atom())
        if any(a is None for a in atoms):
            if len(atoms) > 1:
                raise FormulaError(f"intercept '1' cannot be interacted in {self.text!r}")
            return None
        return tuple(atoms)

    def atom(self):
        kind, value, pos = self.peek()
        if kind == "number":
            self.take()
            if float(value) != 1.0:
                raise FormulaError(f"only the literal 1 is allowed, found {value!r} at position {pos}")
            return None
        name = self.take("name")[1]
        if self.peek()[1] != "(":
            return Factor(name)
        if name not in TRANSFORMS:
            raise FormulaError(f"unknown transform {name!r} at position {pos}", code="UNKNOWN_FUNCTION")
        self.take("op", "(")
        column = self.take("name")[1]
        self.take("op", ")")
        return Factor(column, name)


def _make_term(factors: Sequence[Factor]) -> Term:
    unique: dict[Factor, None] = {}
    for f in factors:
        unique.setdefault(f, None)
    factors = tuple(unique)
    cols = [f.column for f in factors]
    if len(set(cols)) != len(cols):
        raise FormulaError(
            "interaction terms must reference distinct columns: " + ":".join(f.label for f in factors)
        )
    return Term(factors)


def _order_terms(terms: Sequence[Term]) -> tuple[Term, ...]:
    unique: dict[frozenset, Term] = {}
    for t in terms:
        unique.setdefault(t.key(), t)
    ordered = list(unique.values())
    # stable sort: main effects first, then interactions by degree
    ordered.sort(key=lambda t: len(t.factors))
    return tuple(ordered)


def parse_formula(text: str) -> Formula:
    """Parse ``response ~ rhs`` into a :class:`Formula`.

    ``a*b`` expands to ``a + b + a:b``; ``Y ~ 1`` gives an intercept-only model.

    >>> str(parse_formula("Y ~ A * X"))
    'Y ~ A + X + A:X'
    """
    if not isinstance(text, str) or not text.strip():
        raise FormulaError("empty formula")
    return _FormulaParser(text).parse()


def as_formula(formula: str | Formula) -> Formula:
    if isinstance(formula, Formula):
        return formula
    return parse_formula(formula)


def format_formula(formula: Formula) -> str:
    rhs = " + ".join(t.label for t in formula.terms) or "1"
    return f"{formula.response} ~ {rhs}"


def column_names(data) -> list[str]:
    """Column names of a dataset (mapping of arrays or a data frame)."""
    return [str(c) for c in data]


def get_column(data, name: str) -> np.ndarray:
    if name not in data:
        raise DataError(f"column {name!r} not found in data", code="MISSING_COLUMN")
    values = np.asarray(data[name])
    if values.dtype.kind not in "biuf":
        raise DataError(f"column {name!r} is not numeric", code="NON_NUMERIC")
    values = values.astype(float)
    if np.any(np.isnan(values)):
        raise DataError(f"column {name!r} contains missing values", code="MISSING_VALUE")
    return values


def n_rows(data) -> int:
    cols = column_names(data)
    if not cols:
        return 0
    return len(np.asarray(data[cols[0]]))


def build_design(formula: Formula, data, overrides: Mapping[str, float] | None = None) -> DesignMatrix:
    """Build the design matrix of ``formula`` on ``data``.

    ``overrides`` replaces named columns by constants before transforms and
    interactions are computed; this is how counterfactual designs are made.
    """
    overrides = overrides or {}
    n = None
    cache: dict[str, np.ndarray] = {}
    for col in formula.columns:
        values = get_column(data, col)
        n = len(values) if n is None else n
        cache[col] = values
    if n is None:
        n = n_rows(data)
    for col, value in overrides.items():
        if col in cache:
            cache[col] = np.full(n, float(value))

    columns = [np.ones(n)]
    with np.errstate(all="ignore"):
        for term in formula.terms:
            col = np.ones(n)
            for f in term.factors:
                col = col * f.evaluate(cache[f.column])
            if not np.all(np.isfinite(col)):
                raise DataError(f"term {term.label} produced non-finite values", code="NON_FINITE")
            columns.append(col)
    return DesignMatrix(np.column_stack(columns), formula.labels)


# --- arithmetic expressions -------------------------------------------------

EXPR_FUNCTIONS = {"log": np.log, "sqrt": np.sqrt, "exp": np.exp}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


@dataclass(frozen=True)
class PredictorExpr:
    """An arithmetic expression over named symbols.

    Evaluation binds every free symbol; coefficients are scalars and
    variables may be arrays, broadcasting row-wise.
    """

    text: str
    tree: ast.expr = field(repr=False, compare=False)
    response: str | None = None

    @property
    def symbols(self) -> list[str]:
        seen: dict[str, None] = {}
        for node in ast.walk(self.tree):
            if isinstance(node, ast.Name) and node.id not in EXPR_FUNCTIONS:
                seen.setdefault(node.id, None)
        # ast.walk is breadth-first; re-sort by source position
        pos = {}
        for node in ast.walk(self.tree):
            if isinstance(node, ast.Name) and node.id in seen:
                key = (node.lineno, node.col_offset)
                pos[node.id] = min(pos.get(node.id, key), key)
        return sorted(seen, key=lambda s: pos[s])

    def partition(self, coefficient_names) -> tuple[list[str], list[str]]:
        """Split free symbols into (coefficients, variables)."""
        coefs = [s for s in self.symbols if s in coefficient_names]
        variables = [s for s in self.symbols if s not in coefficient_names]
        return coefs, variables

    def evaluate(self, bindings: Mapping[str, object]):
        missing = [s for s in self.symbols if s not in bindings]
        if missing:
            raise FormulaError(f"unbound symbols in {self.text!r}: {', '.join(missing)}", code="UNBOUND_SYMBOL")
        with np.errstate(all="ignore"):
            value = _eval_node(self.tree, bindings)
        if not np.all(np.isfinite(value)):
            raise DataError(f"expression {self.text!r} evaluated to a non-finite value", code="NON_FINITE")
        return value

    def linear_terms(self, coefficient_names) -> list[tuple[str, Term | None]]:
        """Decompose ``coef + coef*var + coef*log(var)*var2 ...`` into model terms.

        Returns ``(coefficient, term)`` pairs, with ``term=None`` for the
        free-standing intercept coefficient.
        """
        out = []
        for summand in _flatten(self.tree, ast.Add):
            coef = None
            factors = []
            for part in _flatten(summand, ast.Mult):
                if isinstance(part, ast.Name) and part.id in coefficient_names:
                    if coef is not None:
                        raise FormulaError(f"{self.text!r} is not linear in its coefficients")
                    coef = part.id
                elif isinstance(part, ast.Name):
                    factors.append(Factor(part.id))
                elif (
                    isinstance(part, ast.Call)
                    and isinstance(part.func, ast.Name)
                    and part.func.id in ("log", "sqrt")
                    and isinstance(part.args[0], ast.Name)
                ):
                    factors.append(Factor(part.args[0].id, part.func.id))
                else:
                    raise FormulaError(f"{self.text!r} is not linear in its coefficients")
            if coef is None:
                raise FormulaError(f"summand without a coefficient in {self.text!r}")
            out.append((coef, _make_term(factors) if factors else None))
        return out

    def __str__(self) -> str:
        return self.text


def _flatten(node, op):
    if isinstance(node, ast.BinOp) and isinstance(node.op, op):
        return _flatten(node.left, op) + _flatten(node.right, op)
    return [node]


def _eval_node(node, env):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        value = env[node.id]
        return np.asarray(value, dtype=float) if not np.isscalar(value) else float(value)
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval_node(node.left, env), _eval_node(node.right, env))
    if isinstance(node, ast.UnaryOp):
        value = _eval_node(node.operand, env)
        return -value if isinstance(node.op, ast.USub) else value
    if isinstance(node, ast.Call):
        return EXPR_FUNCTIONS[node.func.id](_eval_node(node.args[0], env))
    raise FormulaError(f"unsupported expression node {type(node).__name__}")


def _check_node(node, text):
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise FormulaError(f"only numeric literals are allowed in {text!r}")
    elif isinstance(node, ast.Name):
        pass
    elif isinstance(node, ast.BinOp):
        if type(node.op) not in _BINOPS:
            raise FormulaError(f"operator not allowed in {text!r} at position {node.col_offset}")
        _check_node(node.left, text)
        _check_node(node.right, text)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.USub, ast.UAdd)):
            raise FormulaError(f"operator not allowed in {text!r} at position {node.col_offset}")
        _check_node(node.operand, text)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in EXPR_FUNCTIONS:
            name = getattr(node.func, "id", "?")
            raise FormulaError(
                f"unknown function {name!r} at position {node.col_offset}", code="UNKNOWN_FUNCTION"
            )
        if len(node.args) != 1 or node.keywords:
            raise FormulaError(f"{node.func.id}() takes exactly one argument")
        _check_node(node.args[0], text)
    else:
        raise FormulaError(
            f"unsupported syntax in {text!r} at position {getattr(node, 'col_offset', 0)}"
        )


def parse_linear_predictor(text: str) -> PredictorExpr:
    """Parse an arithmetic expression, optionally prefixed by ``response ~``.

    >>> parse_linear_predictor("Y ~ b0 + b1*log(X)").symbols
    ['b0', 'b1', 'X']
    """
    response = None
    body = text
    if "~" in text:
        lhs, body = text.split("~", 1)
        response = lhs.strip()
        if not response.isidentifier():
            raise FormulaError(f"invalid response name {response!r}")
    body = body.strip()
    try:
        tree = ast.parse(body, mode="eval").body
    except SyntaxError as exc:
        raise FormulaError(f"syntax error in {body!r} at position {(exc.offset or 1) - 1}") from None
    _check_node(tree, body)
    return PredictorExpr(body, tree, response)
