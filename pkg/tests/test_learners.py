import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dmlk.errors import ConvergenceError, FitError, SpecError
from dmlk.learners import (ForestParams, LassoParams, LearnerKind, LearnerSpec, coordinate_descent,
                           cv_select_lambda, dump, fit, kkt_violation, lambda_max, ols_fit,
                           predict, standardize)
from dmlk.learners.lasso import lasso_path
from dmlk.stochastics import SeededStream

LIN = LearnerSpec(LearnerKind.LIN)
LAS = LearnerSpec(LearnerKind.LAS)
RF = LearnerSpec(LearnerKind.RF)


def data(n=120, p=4, seed=0, noise=1.0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    y = x @ np.linspace(1, -1, p) + 0.5 + noise * rng.standard_normal(n)
    return x, y


# ---------------------------------------------------------------- OLS

def test_ols_noiseless_recovery():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((50, 3))
    b, c = np.array([1.5, -2.0, 0.25]), 0.7
    y = x @ b + c
    model = fit(LIN, x, y, SeededStream(0))
    assert np.allclose(model.coef, b, atol=1e-8)
    assert abs(model.intercept - c) < 1e-8
    assert np.allclose(model.predict(x), y, atol=1e-8)


def test_ols_matches_lstsq():
    x, y = data(80, 5, seed=3)
    coef, intercept = ols_fit(x, y)
    design = np.column_stack([np.ones(len(y)), x])
    ref = np.linalg.lstsq(design, y, rcond=None)[0]
    assert abs(intercept - ref[0]) < 1e-10
    assert np.allclose(coef, ref[1:], atol=1e-10)


def test_identity_model_prediction():
    from dmlk.learners import LinearFit
    model = LinearFit(LearnerKind.LIN, np.array([1.0, 0.0]), 0.0)
    assert np.array_equal(predict(model, np.array([[2.0, 0.0], [0.0, 5.0]])), [2.0, 0.0])


def test_duplicated_column_ridge_fallback():
    x, y = data(100, 3, seed=4)
    base = fit(LIN, x, y, SeededStream(0)).predict(x)
    dup = np.column_stack([x, x[:, 0]])
    model = fit(LIN, dup, y, SeededStream(0))
    assert np.max(np.abs(model.predict(dup) - base)) < 1e-6


@given(st.floats(0.1, 50), st.integers(0, 1000))
def test_ols_scale_equivariance(c, seed):
    x, y = data(40, 3, seed=seed)
    m1 = fit(LIN, x, y, SeededStream(0))
    m2 = fit(LIN, x, c * y, SeededStream(0))
    assert np.allclose(m2.coef, c * m1.coef, rtol=1e-8, atol=1e-10)
    assert np.allclose(m2.predict(x), c * m1.predict(x), rtol=1e-8, atol=1e-9)


# ------------------------------------------------------- shared contract

@pytest.mark.parametrize("spec", [LIN, LAS, RF], ids=lambda s: s.label)
def test_predict_dimension_mismatch(spec):
    x, y = data(60, 3)
    model = fit(spec, x, y, SeededStream(0))
    with pytest.raises(SpecError):
        model.predict(np.zeros((2, 4)))


@pytest.mark.parametrize("spec", [LIN, LAS, RF], ids=lambda s: s.label)
def test_predict_empty(spec):
    x, y = data(60, 3)
    model = fit(spec, x, y, SeededStream(0))
    out = model.predict(np.zeros((0, 3)))
    assert out.shape == (0,)


@pytest.mark.parametrize("spec", [LIN, LAS, RF], ids=lambda s: s.label)
def test_finite_predictions_and_dump(spec):
    x, y = data(60, 3)
    model = fit(spec, x, y, SeededStream(0))
    assert np.all(np.isfinite(model.predict(x * 100)))
    assert json.loads(dump(model))["kind"] == spec.kind.value


def test_fit_rejects_small_or_nonfinite():
    with pytest.raises(FitError):
        fit(LAS, np.zeros((3, 2)), np.zeros(3), SeededStream(0))
    with pytest.raises(FitError):
        fit(LIN, np.array([[np.nan], [1.0]]), np.zeros(2), SeededStream(0))


# -------------------------------------------------------------- lasso

def naive_lasso(xs, yc, lam, tol=1e-13, max_sweeps=200_000):
    # Oracle: residual-based cyclic coordinate descent, no Gram matrix.
    n, p = xs.shape
    beta = np.zeros(p)
    r = yc.copy()
    z = (xs**2).sum(axis=0) / n
    for _ in range(max_sweeps):
        biggest = 0.0
        for j in range(p):
            if z[j] == 0:
                continue
            rho = xs[:, j] @ r / n + z[j] * beta[j]
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / z[j]
            if new != beta[j]:
                r -= xs[:, j] * (new - beta[j])
                biggest = max(biggest, abs(new - beta[j]))
                beta[j] = new
        if biggest < tol:
            return beta
    raise AssertionError("oracle did not converge")


@pytest.mark.parametrize("frac", [0.5, 0.1, 0.01])
def test_lasso_matches_naive_oracle(frac):
    x, y = data(90, 6, seed=7)
    xs, *_ = standardize(x)
    yc = y - y.mean()
    lam = frac * lambda_max(xs, yc)
    got = coordinate_descent(xs, yc, lam, tol=1e-12)
    assert np.allclose(got, naive_lasso(xs, yc, lam), atol=1e-9)


def test_lasso_orthonormal_lambda_zero():
    q, _ = np.linalg.qr(np.random.default_rng(5).standard_normal((64, 4)))
    xs = q * 8.0  # columns with x_j'x_j / n = 1
    y = np.random.default_rng(6).standard_normal(64)
    beta = coordinate_descent(xs, y, 0.0)
    assert np.allclose(beta, xs.T @ y / 64, atol=1e-12)


def test_lasso_lambda_max_gives_zero():
    x, y = data(50, 5, seed=8)
    xs, *_ = standardize(x)
    yc = y - y.mean()
    assert np.all(coordinate_descent(xs, yc, lambda_max(xs, yc)) == 0)


@given(st.floats(-3, 3), st.floats(0.0, 2.0), st.integers(0, 10_000))
def test_lasso_univariate_soft_threshold(slope, lam, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(30)
    x = (x - x.mean()) / x.std()
    y = slope * x + rng.standard_normal(30)
    y -= y.mean()
    rho = x @ y / 30
    expected = math.copysign(max(abs(rho) - lam, 0.0), rho)
    got = coordinate_descent(x[:, None], y, lam, tol=1e-14)[0]
    assert got == pytest.approx(expected, abs=1e-12)


@given(st.integers(0, 10_000), st.floats(0.001, 0.9))
def test_lasso_kkt_and_monotone_objective(seed, frac):
    x, y = data(60, 8, seed=seed)
    xs, *_ = standardize(x)
    yc = y - y.mean()
    lam = frac * lambda_max(xs, yc)
    tol = 1e-7
    beta, trace = coordinate_descent(xs, yc, lam, tol=tol, return_trace=True)
    assert np.all(np.diff(trace) <= 1e-12 * np.maximum(1.0, np.abs(trace[1:])))
    grad = xs.T @ (yc - xs @ beta) / len(yc)
    active = beta != 0
    # Residual gradient bound: a coordinate that last moved by < tol leaves a
    # stationarity gap of at most tol times the largest Gram entry.
    slack = tol * np.abs(xs.T @ xs / len(yc)).sum(axis=1).max()
    assert np.all(np.abs(grad[active] - lam * np.sign(beta[active])) <= slack)
    assert np.all(np.abs(grad[~active]) <= lam + slack)
    assert kkt_violation(xs, yc, beta, lam) <= slack


def test_lasso_convergence_error_carries_iterate():
    x, y = data(60, 8, seed=2)
    xs, *_ = standardize(x)
    with pytest.raises(ConvergenceError) as info:
        coordinate_descent(xs, y - y.mean(), 1e-4, max_iter=1)
    assert info.value.coef is not None and info.value.kkt_violation > 0


def test_lasso_huge_lambda_predicts_mean():
    x, y = data(50, 3)
    spec = LearnerSpec(LearnerKind.LAS, lasso=LassoParams(lambda_grid=(1e6,)))
    model = fit(spec, x, y, SeededStream(0))
    assert np.all(model.coef == 0)
    assert np.allclose(model.predict(x), y.mean(), atol=1e-12)


def test_lasso_lambda_zero_matches_ols():
    x, y = data(200, 4, seed=9)
    spec = LearnerSpec(LearnerKind.LAS, lasso=LassoParams(lambda_grid=(0.0,), tol=1e-12))
    las = fit(spec, x, y, SeededStream(0)).predict(x)
    lin = fit(LIN, x, y, SeededStream(0)).predict(x)
    assert np.max(np.abs(las - lin)) < 1e-6


def test_lasso_constant_y_intercept_only():
    x, _ = data(40, 3)
    model = fit(LAS, x, np.full(40, 2.5), SeededStream(0))
    assert np.all(model.coef == 0)
    assert np.allclose(model.predict(x), 2.5)


def test_lasso_constant_column_inactive():
    x, y = data(60, 3)
    x[:, 1] = 4.0
    model = fit(LAS, x, y, SeededStream(0))
    assert model.coef[1] == 0.0


def test_cv_grid_of_one():
    x, y = data(40, 3)
    spec = LearnerSpec(LearnerKind.LAS, lasso=LassoParams(lambda_grid=(0.3,)))
    lam, _, _ = cv_select_lambda(spec, x, y, SeededStream(0))
    assert lam == 0.3


def test_cv_noiseless_linear_picks_smallest():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((100, 5))
    y = x @ np.array([1.0, -1.0, 0.5, 0.0, 2.0]) + 1.0
    lam, lambdas, cv_error = cv_select_lambda(LAS, x, y, SeededStream(1))
    assert lam == lambdas[-1]
    assert np.all(np.diff(cv_error) < 0)


def test_cv_pure_noise_picks_large_lambda():
    hits = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((100, 10))
        y = rng.standard_normal(100)
        lam, lambdas, _ = cv_select_lambda(LAS, x, y, SeededStream(seed))
        hits += int(np.searchsorted(-lambdas, -lam)) < len(lambdas) // 2
    assert hits >= 45


def test_cv_ties_go_to_larger_lambda():
    x, y = data(50, 3)
    spec = LearnerSpec(LearnerKind.LAS, lasso=LassoParams(lambda_grid=(1e6, 1e5, 1e4)))
    lam, _, cv_error = cv_select_lambda(spec, x, y, SeededStream(0))
    assert cv_error[0] == cv_error[1] == cv_error[2]
    assert lam == 1e6


def test_cv_patience_agrees_with_full_grid():
    from dmlk.dgp import gen_sample, make_spec
    spec = make_spec("highdim", 300, 0.5, 0.9)
    patient = LearnerSpec(LearnerKind.LAS, lasso=LassoParams(cv_patience=10))
    for seed in range(3):
        ds = gen_sample(spec, 120, SeededStream(seed))
        full = cv_select_lambda(LAS, ds.x, ds.d, SeededStream(seed))
        short = cv_select_lambda(patient, ds.x, ds.d, SeededStream(seed))
        assert short[0] == full[0]
        seen = ~np.isnan(short[2])
        assert np.array_equal(short[2][seen], full[2][seen])


def test_lasso_path_warm_start_matches_cold():
    x, y = data(80, 6, seed=12)
    lambdas = np.geomspace(1.0, 0.01, 12)
    slopes, intercepts = lasso_path(x, y, lambdas, tol=1e-12)
    xs, mean, scale, _ = standardize(x)
    cold = coordinate_descent(xs, y - y.mean(), lambdas[-1], tol=1e-12) / scale
    assert np.allclose(slopes[-1], cold, atol=1e-8)


# ------------------------------------------------------------- forest

def brute_force_tree(x, y, depth, min_leaf):
    # Oracle: recursive exhaustive search over features and midpoints.
    def node(idx, d):
        yy = y[idx]
        if d == depth or len(idx) < 2 * min_leaf:
            return ("leaf", yy.mean())
        total, count = yy.sum(), len(idx)
        parent = total * total / count
        if (yy**2).sum() - parent <= 1e-12 * (yy**2).sum():
            return ("leaf", yy.mean())
        best = parent + 1e-12 * abs(parent)
        choice = None
        for f in range(x.shape[1]):
            order = idx[np.argsort(x[idx, f], kind="stable")]
            xs_, ys_ = x[order, f], y[order]
            for c in range(min_leaf, count - min_leaf + 1):
                if xs_[c] <= xs_[c - 1]:
                    continue
                s = ys_[:c].sum()
                gain = s * s / c + (total - s) ** 2 / (count - c)
                if gain > best:
                    best = gain
                    choice = (f, 0.5 * (xs_[c - 1] + xs_[c]))
        if choice is None:
            return ("leaf", yy.mean())
        f, t = choice
        left = idx[x[idx, f] <= t]
        right = idx[x[idx, f] > t]
        return ("split", f, t, node(left, d + 1), node(right, d + 1))

    return node(np.arange(len(y)), 0)


def tree_predict(tree, row):
    while tree[0] == "split":
        _, f, t, left, right = tree
        tree = left if row[f] <= t else right
    return tree[1]


@pytest.mark.parametrize("depth,min_leaf", [(1, 1), (3, 5), (5, 2)])
def test_single_tree_matches_brute_force(depth, min_leaf):
    x, y = data(70, 3, seed=depth)
    spec = LearnerSpec(LearnerKind.RF, rf=ForestParams(n_trees=1, max_depth=depth,
                                                       min_leaf=min_leaf, mtry=3,
                                                       bootstrap=False))
    model = fit(spec, x, y, SeededStream(0))
    tree = brute_force_tree(x, y, depth, min_leaf)
    probe = np.random.default_rng(1).standard_normal((200, 3))
    expected = [tree_predict(tree, row) for row in probe]
    assert np.allclose(model.predict(probe), expected, atol=1e-12)


def test_rf_constant_y():
    x, _ = data(60, 4)
    model = fit(RF, x, np.full(60, 3.0), SeededStream(0))
    assert np.allclose(model.predict(x), 3.0, atol=1e-12)


def test_rf_depth_zero_predicts_mean():
    x, y = data(60, 4)
    spec = LearnerSpec(LearnerKind.RF, rf=ForestParams(n_trees=5, max_depth=0, bootstrap=False))
    assert np.allclose(fit(spec, x, y, SeededStream(0)).predict(x), y.mean(), atol=1e-12)


@given(st.integers(0, 6), st.integers(1, 8), st.integers(0, 2**32))
def test_rf_depth_bound(depth, min_leaf, seed):
    x, y = data(80, 3, seed=seed % 1000)
    spec = LearnerSpec(LearnerKind.RF, rf=ForestParams(n_trees=10, max_depth=depth,
                                                       min_leaf=min_leaf))
    model = fit(spec, x, y, SeededStream(seed))
    assert model.depths().max() <= depth


def test_rf_deterministic():
    x, y = data(150, 5)
    a = fit(RF, x, y, SeededStream(77))
    b = fit(RF, x, y, SeededStream(77))
    assert dump(a) == dump(b)
    assert np.array_equal(a.predict(x), b.predict(x))
    c = fit(RF, x, y, SeededStream(78))
    assert not np.array_equal(a.predict(x), c.predict(x))


def test_rf_learns_signal():
    x, y = data(400, 3, noise=0.1)
    model = fit(RF, x, y, SeededStream(0))
    resid = y - model.predict(x)
    assert resid.var() < 0.5 * y.var()


def test_spec_validation():
    with pytest.raises(SpecError):
        LearnerSpec(LearnerKind.LAS, lasso=LassoParams(cv_folds=1))
    with pytest.raises(SpecError):
        LearnerSpec(LearnerKind.LAS, lasso=LassoParams(lambda_grid=(0.1, 0.5)))
    with pytest.raises(SpecError):
        LearnerSpec(LearnerKind.RF, rf=ForestParams(n_trees=0))
