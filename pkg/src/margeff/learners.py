"""Regression learners and the discrete super learner used for prognostic models."""

from __future__ import annotations

import json
import logging
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.ensemble import RandomForestRegressor
from sklearn.neighbors import KNeighborsRegressor

from .errors import EstimationWarning, LearnerError, MargeffError
from .formula import Formula, as_formula, build_design, column_names, get_column, n_rows
from .rng import child_seed, stream

logger = logging.getLogger(__name__)

KINDS = ("ols", "ridge", "knn", "random_forest")

DEFAULT_CV_FOLDS = 5


def n_jobs() -> int:
    """Worker cap for forest fitting, from ``MARGEFF_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("MARGEFF_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class LearnerSpec:
    name: str
    kind: str
    hyper_grid: tuple = ({},)
    trees: int = 500

    def __post_init__(self):
        if self.kind not in KINDS:
            raise LearnerError(f"unknown learner kind {self.kind!r}", code="UNKNOWN_LEARNER")
        grid = tuple(dict(g) for g in self.hyper_grid)
        if not grid:
            raise LearnerError(f"learner {self.name!r} has an empty hyperparameter grid")
        object.__setattr__(self, "hyper_grid", grid)
        for setting in grid:
            _validate_setting(self.kind, setting)
        if self.trees < 1:
            raise LearnerError("trees must be positive")


def _validate_setting(kind, setting):
    if kind == "ridge" and setting.get("penalty", 0.0) < 0:
        raise LearnerError("ridge penalty must be >= 0")
    if kind == "knn" and int(setting.get("k", 5)) < 1:
        raise LearnerError("knn k must be >= 1")
    if kind == "random_forest" and int(setting.get("min_node_size", 5)) < 1:
        raise LearnerError("min_node_size must be >= 1")


def default_learners() -> list[LearnerSpec]:
    return [
        LearnerSpec("rf", "random_forest", tuple({"min_node_size": m} for m in range(1, 11)), trees=500),
        LearnerSpec("ridge", "ridge", tuple({"penalty": lam} for lam in (0.0, 0.1, 1.0, 10.0, 100.0))),
    ]


def learners_from_config(config) -> list[LearnerSpec]:
    """Build learner specs from a JSON list (or a path to one).

    Each entry is ``{"name": ..., "kind": ..., "hyper_grid": [...], "trees": ...}``.
    """
    if isinstance(config, (str, os.PathLike)):
        with open(config, encoding="utf-8") as fh:
            config = json.load(fh)
    specs = []
    for entry in config:
        try:
            specs.append(
                LearnerSpec(
                    entry["name"],
                    entry["kind"],
                    tuple(entry.get("hyper_grid") or [{}]),
                    int(entry.get("trees", 500)),
                )
            )
        except KeyError as exc:
            raise LearnerError(f"learner config entry missing {exc}", code="BAD_CONFIG") from None
    return specs


@dataclass
class FittedLearner:
    spec: LearnerSpec
    setting: dict
    formula: Formula
    model: object = field(repr=False)

    def predict(self, data) -> np.ndarray:
        X = build_design(self.formula, data).matrix
        kind = self.spec.kind
        if kind in ("ols", "ridge"):
            return X @ self.model
        if self.model[0] == "constant":
            return np.full(X.shape[0], self.model[1])
        return self.model[1].predict(X[:, 1:])


def fit_learner(spec: LearnerSpec, setting, formula, data, seed=0) -> FittedLearner:
    """Fit one learner at one hyperparameter setting."""
    formula = as_formula(formula)
    design = build_design(formula, data)
    X = design.matrix
    y = get_column(data, formula.response)
    n, p = X.shape
    if n == 0:
        raise LearnerError("cannot fit a learner to empty data", code="EMPTY_INPUT")
    setting = dict(setting)
    kind = spec.kind
    if kind in ("ols", "ridge"):
        lam = float(setting.get("penalty", 0.0)) if kind == "ridge" else 0.0
        if lam == 0.0 and np.linalg.matrix_rank(X) < p:
            raise LearnerError("singular design for least squares", code="SINGULAR")
        penalty = lam * np.eye(p)
        penalty[0, 0] = 0.0
        beta = np.linalg.solve(X.T @ X + penalty, X.T @ y)
        return FittedLearner(spec, setting, formula, beta)

    if p == 1:
        return FittedLearner(spec, setting, formula, ("constant", float(np.mean(y))))
    features = X[:, 1:]
    if kind == "knn":
        k = int(setting.get("k", 5))
        if k > n:
            raise LearnerError(f"knn with k={k} needs at least {k} rows, got {n}", code="KNN_TOO_FEW_ROWS")
        model = KNeighborsRegressor(n_neighbors=k).fit(features, y)
    else:
        model = RandomForestRegressor(
            n_estimators=spec.trees,
            min_samples_leaf=int(setting.get("min_node_size", 5)),
            max_features=math.ceil(math.sqrt(features.shape[1])),
            bootstrap=True,
            random_state=seed,
            n_jobs=n_jobs(),
        ).fit(features, y)
    return FittedLearner(spec, setting, formula, (kind, model))


@dataclass
class SuperLearnerFit:
    winner: FittedLearner
    winner_name: str
    winner_hypers: dict
    cv_table: list[dict]
    cv_folds: int
    formula: Formula
    training_summary: dict

    def predict(self, new_data) -> np.ndarray:
        preds = self.winner.predict(new_data)
        if not np.all(np.isfinite(preds)):
            raise LearnerError("winner produced non-finite predictions", code="NON_FINITE")
        return preds


def _rmse(y, pred):
    return float(np.sqrt(np.mean((y - pred) ** 2)))


def _subset(data, rows):
    return {c: np.asarray(data[c])[rows] for c in column_names(data)}


def fit_best_learner(formula, data, cv_folds: int = DEFAULT_CV_FOLDS, learners=None, seed=0) -> SuperLearnerFit:
    """Discrete super learner: pick the candidate with lowest K-fold CV RMSE, refit on all rows.

    Every (learner, hyperparameter setting) pair is scored on the same fold
    assignment. A candidate that fails on some fold scores ``inf``. Ties go
    to the earlier learner and then the earlier grid entry.
    """
    formula = as_formula(formula)
    learners = default_learners() if learners is None else list(learners)
    if not learners:
        raise LearnerError("learner list is empty")
    n = n_rows(data)
    if cv_folds < 2:
        raise LearnerError("cv_folds must be at least 2", code="BAD_FOLDS")
    if n < 2 * cv_folds:
        raise LearnerError(f"need at least {2 * cv_folds} rows for {cv_folds}-fold CV, got {n}", code="TOO_FEW_ROWS")
    y = get_column(data, formula.response)

    rng = stream(seed, "super_learner_folds")
    folds = rng.permutation(n) % cv_folds
    splits = [(_subset(data, folds != k), _subset(data, folds == k), y[folds == k]) for k in range(cv_folds)]

    table = []
    cand = 0
    for spec in learners:
        for setting in spec.hyper_grid:
            scores = []
            for k, (train, valid, y_valid) in enumerate(splits):
                try:
                    fitted = fit_learner(spec, setting, formula, train, seed=child_seed(seed, "learner", cand, k))
                    scores.append(_rmse(y_valid, fitted.predict(valid)))
                except (MargeffError, ValueError, np.linalg.LinAlgError) as exc:
                    warnings.warn(
                        f"learner {spec.name} {setting} failed on fold {k}: {exc}", EstimationWarning, stacklevel=2
                    )
                    scores.append(math.inf)
            table.append(
                {
                    "learner": spec.name,
                    "kind": spec.kind,
                    "hypers": dict(setting),
                    "cv_rmse": float(np.mean(scores)),
                }
            )
            cand += 1

    best = int(np.argmin([row["cv_rmse"] for row in table]))
    if not math.isfinite(table[best]["cv_rmse"]):
        raise LearnerError("every candidate learner failed", code="ALL_LEARNERS_FAILED")
    winner_spec = [s for s in learners for _ in s.hyper_grid][best]
    winner_setting = table[best]["hypers"]
    logger.info("super learner winner: %s %s (cv rmse %.4g)", winner_spec.name, winner_setting, table[best]["cv_rmse"])
    winner = fit_learner(winner_spec, winner_setting, formula, data, seed=child_seed(seed, "learner", best, cv_folds))
    return SuperLearnerFit(
        winner=winner,
        winner_name=winner_spec.name,
        winner_hypers=dict(winner_setting),
        cv_table=table,
        cv_folds=cv_folds,
        formula=formula,
        training_summary={"n": n, "columns": column_names(data)},
    )
