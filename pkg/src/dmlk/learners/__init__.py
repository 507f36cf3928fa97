"""Nuisance regressors behind one ``fit``/``predict`` interface.

Three kinds are available: OLS (``lin``), cross-validated lasso (``las``) and
a depth-limited random forest (``rf``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from ..errors import FitError, SpecError
from ..stochastics import SeededStream, balanced_assignment
from . import forest as _forest
from .lasso import (PathState, coordinate_descent, kkt_violation, lambda_grid, lambda_max,
                    lasso_path, standardize)
from .ols import ols_fit


class LearnerKind(str, Enum):
    LIN = "lin"
    LAS = "las"
    RF = "rf"


@dataclass(frozen=True)
class LassoParams:
    lambda_grid: Optional[tuple] = None  # None: derived from the data
    n_lambda: int = 100
    lambda_ratio: float = 1e-3
    cv_folds: int = 5
    tol: float = 1e-7
    max_iter: int = 100_000
    # Stop the CV search after this many consecutive penalties without a new
    # minimum. None scans the whole grid.
    cv_patience: Optional[int] = None


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 200
    max_depth: int = 5
    min_leaf: int = 5
    mtry: Optional[int] = None  # None: ceil(p / 3)
    bootstrap: bool = True


@dataclass(frozen=True)
class LearnerSpec:
    kind: LearnerKind
    lasso: LassoParams = field(default_factory=LassoParams)
    rf: ForestParams = field(default_factory=ForestParams)

    def __post_init__(self):
        object.__setattr__(self, "kind", LearnerKind(self.kind))
        if self.lasso.cv_folds < 2:
            raise SpecError("lasso cv_folds must be >= 2")
        if self.lasso.lambda_grid is not None:
            grid = tuple(float(v) for v in self.lasso.lambda_grid)
            if not grid or any(v < 0 for v in grid) or list(grid) != sorted(grid, reverse=True):
                raise SpecError("lambda_grid must be non-empty, non-negative and descending")
            object.__setattr__(self, "lasso", replace(self.lasso, lambda_grid=grid))
        if self.rf.n_trees < 1 or self.rf.max_depth < 0 or self.rf.min_leaf < 1:
            raise SpecError("forest needs n_trees >= 1, max_depth >= 0, min_leaf >= 1")
        if self.rf.mtry is not None and self.rf.mtry < 1:
            raise SpecError("forest mtry must be >= 1")
        if self.lasso.cv_patience is not None and self.lasso.cv_patience < 1:
            raise SpecError("lasso cv_patience must be >= 1")
        if self.lasso.n_lambda < 1 or not 0.0 < self.lasso.lambda_ratio < 1.0:
            raise SpecError("lasso needs n_lambda >= 1 and lambda_ratio in (0, 1)")
        if self.lasso.tol <= 0 or self.lasso.max_iter < 1:
            raise SpecError("lasso needs tol > 0 and max_iter >= 1")

    @classmethod
    def named(cls, kind, **overrides):
        return cls(kind=LearnerKind(kind), **overrides)

    @property
    def label(self) -> str:
        return self.kind.value.upper()

    def min_samples(self) -> int:
        return max(2, self.lasso.cv_folds) if self.kind is LearnerKind.LAS else 2


class _Fitted:
    kind: LearnerKind
    p: int

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.p:
            raise SpecError(f"expected a matrix with {self.p} columns, got shape {x.shape}")
        return x


@dataclass(frozen=True, eq=False)
class LinearFit(_Fitted):
    kind: LearnerKind
    coef: np.ndarray
    intercept: float
    lam: Optional[float] = None
    cv_error: Optional[np.ndarray] = None
    lambdas: Optional[np.ndarray] = None

    @property
    def p(self):
        return self.coef.shape[0]

    def predict(self, x):
        x = self._check(x)
        return x @ self.coef + self.intercept

    def to_dict(self):
        out = {"kind": self.kind.value, "p": self.p, "coef": self.coef.tolist(),
               "intercept": self.intercept}
        if self.lam is not None:
            out["lambda"] = self.lam
        return out


@dataclass(frozen=True, eq=False)
class ForestFit(_Fitted):
    kind: LearnerKind
    p: int
    arrays: tuple
    cap: int
    params: ForestParams

    def predict(self, x):
        x = self._check(x)
        if x.shape[0] == 0:
            return np.zeros(0)
        return _forest.predict_forest(x, self.arrays, self.cap)

    def depths(self):
        return _forest.tree_depths(self.arrays, self.cap)

    def to_dict(self):
        feat, thr, left, right, value, sizes = self.arrays
        trees = []
        for t, size in enumerate(sizes):
            sl = slice(t * self.cap, t * self.cap + int(size))
            trees.append({"feature": feat[sl].tolist(), "threshold": thr[sl].tolist(),
                          "left": left[sl].tolist(), "right": right[sl].tolist(),
                          "value": value[sl].tolist()})
        return {"kind": self.kind.value, "p": self.p, "trees": trees}


def dump(model) -> str:
    """JSON text form of a fitted model, for debugging."""
    return json.dumps(model.to_dict(), indent=1)


def predict(model, x) -> np.ndarray:
    return model.predict(x)


def _validate(spec, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise SpecError(f"inconsistent shapes x {x.shape}, y {y.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise FitError("training data contains non-finite values")
    if x.shape[0] < spec.min_samples():
        raise FitError(f"{spec.label} needs at least {spec.min_samples()} rows, got {x.shape[0]}")
    return x, y


def _grid_for(spec, x, y):
    if spec.lasso.lambda_grid is not None:
        return np.asarray(spec.lasso.lambda_grid)
    xs, *_ = standardize(x)
    lam_max = lambda_max(xs, y - y.mean())
    if lam_max == 0.0:
        return np.zeros(1)
    return lambda_grid(lam_max, spec.lasso.n_lambda, spec.lasso.lambda_ratio)


def cv_select_lambda(spec: LearnerSpec, x, y, stream: SeededStream):
    """Grid penalty minimizing mean held-out squared error.

    Returns ``(lam, lambdas, cv_error)``; exact ties go to the larger penalty.
    Fold paths advance together one penalty at a time. With
    ``cv_patience`` set, penalties after the search stops are never fitted
    and carry NaN in ``cv_error``.
    """
    x, y = _validate(spec, x, y)
    lambdas = _grid_for(spec, x, y)
    params = spec.lasso
    if lambdas.shape[0] == 1:
        return float(lambdas[0]), lambdas, np.zeros(1)
    assignment = balanced_assignment(x.shape[0], params.cv_folds, stream)
    folds = []
    for fold in range(params.cv_folds):
        test = assignment == fold
        folds.append((PathState(x[~test], y[~test]), x[test], y[test]))
    cv_error = np.full(lambdas.shape[0], np.nan)
    best, since_best = np.inf, 0
    for k, lam in enumerate(lambdas):
        sq = 0.0
        for state, x_te, y_te in folds:
            slopes, intercepts = state.advance(lambdas[k:k + 1], params.tol, params.max_iter)
            resid = y_te - (x_te @ slopes[0] + intercepts[0])
            sq += float(resid @ resid)
        cv_error[k] = sq / x.shape[0]
        if cv_error[k] < best:
            best, since_best = cv_error[k], 0
        else:
            since_best += 1
            if params.cv_patience is not None and since_best >= params.cv_patience:
                break
    chosen = int(np.nanargmin(cv_error))
    return float(lambdas[chosen]), lambdas, cv_error


def fit(spec: LearnerSpec, x, y, stream: SeededStream):
    """Fit one nuisance regression; deterministic given (spec, data, stream)."""
    x, y = _validate(spec, x, y)
    kind = spec.kind
    if kind is LearnerKind.LIN:
        coef, intercept = ols_fit(x, y)
        return LinearFit(kind, coef, intercept)
    if kind is LearnerKind.LAS:
        lam, lambdas, cv_error = cv_select_lambda(spec, x, y, stream)
        # Warm-start down the grid to the chosen penalty.
        path = lambdas[: int(np.searchsorted(-lambdas, -lam, side="right"))]
        slopes, intercepts = lasso_path(x, y, path, spec.lasso.tol, spec.lasso.max_iter)
        return LinearFit(kind, slopes[-1], float(intercepts[-1]), lam=lam,
                         cv_error=cv_error, lambdas=lambdas)
    p = x.shape[1]
    params = spec.rf
    mtry = params.mtry if params.mtry is not None else max(1, math.ceil(p / 3))
    mtry = min(mtry, p)
    seeds = stream.seeds(params.n_trees)
    arrays, cap = _forest.grow_forest(x, y, seeds, params.max_depth, params.min_leaf,
                                      mtry, params.bootstrap)
    return ForestFit(kind, p, arrays, cap, params)


__all__ = [
    "LearnerKind", "LassoParams", "ForestParams", "LearnerSpec", "LinearFit", "ForestFit",
    "fit", "predict", "dump", "cv_select_lambda", "coordinate_descent", "kkt_violation",
    "lasso_path", "lambda_grid", "lambda_max", "standardize", "ols_fit",
]
