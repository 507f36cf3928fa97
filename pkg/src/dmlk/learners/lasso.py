"""L1-penalized least squares by cyclic coordinate descent.

Objective on standardized covariates ``xs`` and centered response ``yc``::

    (1 / 2n) * ||yc - xs @ b||^2 + lam * ||b||_1

Columns are standardized with the 1/n divisor so each has ``x_j'x_j / n = 1``;
the intercept is unpenalized and recovered on the original scale. Updates
work on the Gram matrix ``x'x / n`` (covariance updates), so a coordinate
step never touches the n rows.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ..errors import ConvergenceError, SpecError


@njit(cache=True)
def _objective(yy, c, q, beta, lam):
    # 0.5 * mean(r^2) with r = y - X b, written in Gram form.
    quad = 0.0
    lin = 0.0
    l1 = 0.0
    for j in range(beta.shape[0]):
        quad += beta[j] * q[j]
        lin += beta[j] * c[j]
        l1 += abs(beta[j])
    return 0.5 * (yy - 2.0 * lin + quad) + lam * l1


@njit(cache=True)
def _sweep(gram, c, q, beta, lam, active_only):
    """One cyclic pass. ``q = gram @ beta`` is kept current, so each
    coordinate costs O(1) plus O(p) when it moves."""
    p = beta.shape[0]
    max_delta = 0.0
    for j in range(p):
        zj = gram[j, j]
        if zj == 0.0:
            continue
        bj = beta[j]
        if active_only and bj == 0.0:
            continue
        rho = c[j] - q[j] + zj * bj
        if rho > lam:
            new = (rho - lam) / zj
        elif rho < -lam:
            new = (rho + lam) / zj
        else:
            new = 0.0
        delta = new - bj
        if delta != 0.0:
            for k in range(p):
                q[k] += delta * gram[j, k]
            beta[j] = new
            if abs(delta) > max_delta:
                max_delta = abs(delta)
    return max_delta


@njit(cache=True)
def _cd_solve(gram, c, yy, q, beta, lam, tol, max_iter, trace):
    """Full sweeps alternate with active-set sweeps until a full sweep moves
    no coefficient by ``tol`` or more. Updates ``beta`` and ``q`` in place."""
    sweeps = 0
    while True:
        delta = _sweep(gram, c, q, beta, lam, False)
        if sweeps < trace.shape[0]:
            trace[sweeps] = _objective(yy, c, q, beta, lam)
        sweeps += 1
        if delta < tol:
            return sweeps, True
        if sweeps >= max_iter:
            return sweeps, False
        while True:
            delta = _sweep(gram, c, q, beta, lam, True)
            if sweeps < trace.shape[0]:
                trace[sweeps] = _objective(yy, c, q, beta, lam)
            sweeps += 1
            if delta < tol:
                break
            if sweeps >= max_iter:
                return sweeps, False


@njit(cache=True)
def _cd_path(gram, c, yy, lambdas, tol, max_iter, beta, q):
    """Warm-started path; ``beta`` and ``q`` carry state between calls."""
    n_lam = lambdas.shape[0]
    coefs = np.zeros((n_lam, beta.shape[0]))
    ok = np.ones(n_lam, dtype=np.bool_)
    empty = np.zeros(0)
    for k in range(n_lam):
        _, conv = _cd_solve(gram, c, yy, q, beta, lambdas[k], tol, max_iter, empty)
        ok[k] = conv
        coefs[k] = beta
    return coefs, ok


def _moments(x, y):
    n = x.shape[0]
    return x.T @ x / n, x.T @ y / n, float(y @ y) / n


def column_scales(x):
    """``x_j'x_j / n`` for each column."""
    return np.einsum("ij,ij->j", x, x) / x.shape[0]


def kkt_violation(x_std, y_c, beta, lam) -> float:
    """Largest violation of the lasso stationarity conditions."""
    n = x_std.shape[0]
    grad = x_std.T @ (y_c - x_std @ beta) / n
    z = column_scales(x_std)
    live = z > 0
    active = live & (beta != 0)
    inactive = live & (beta == 0)
    viol = 0.0
    if active.any():
        viol = max(viol, float(np.max(np.abs(grad[active] - lam * np.sign(beta[active])))))
    if inactive.any():
        viol = max(viol, float(np.max(np.abs(grad[inactive]) - lam)))
    return max(viol, 0.0)


def coordinate_descent(x_std, y_c, lam, warm=None, tol=1e-7, max_iter=100_000,
                       return_trace=False):
    """Minimize the lasso objective at one penalty level.

    Columns with zero ``x_j'x_j`` are held at zero. With ``return_trace`` the
    objective after every sweep is returned as well.
    """
    x = np.asarray(x_std, dtype=float)
    y = np.asarray(y_c, dtype=float)
    if lam < 0:
        raise SpecError(f"penalty must be >= 0, got {lam}")
    gram, c, yy = _moments(x, y)
    beta = np.zeros(x.shape[1]) if warm is None else np.array(warm, dtype=float)
    beta[np.diag(gram) == 0.0] = 0.0
    q = gram @ beta
    trace = np.zeros(max_iter if return_trace else 0)
    sweeps, converged = _cd_solve(gram, c, yy, q, beta, float(lam), float(tol),
                                  int(max_iter), trace)
    if not converged:
        raise ConvergenceError(
            f"coordinate descent did not converge in {max_iter} sweeps at lambda={lam}",
            coef=beta,
            kkt_violation=kkt_violation(x, y, beta, lam),
        )
    if return_trace:
        return beta, trace[:sweeps]
    return beta


def standardize(x):
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    live = scale > 0.0
    safe = np.where(live, scale, 1.0)
    xs = (x - mean) / safe
    xs[:, ~live] = 0.0
    return xs, mean, safe, live


def lambda_max(x_std, y_c) -> float:
    return float(np.max(np.abs(x_std.T @ y_c)) / x_std.shape[0]) if x_std.shape[1] else 0.0


def lambda_grid(lam_max, n_lambda=100, ratio=1e-3):
    """Log-spaced descending grid from ``lam_max`` down to ``ratio * lam_max``."""
    return np.geomspace(lam_max, ratio * lam_max, n_lambda)


class PathState:
    """Standardized moments of one training sample plus the warm-start state."""

    def __init__(self, x, y):
        self.xs, self.mean, self.scale, _ = standardize(x)
        self.y_mean = float(y.mean())
        self.yc = y - self.y_mean
        self.gram, self.c, self.yy = _moments(self.xs, self.yc)
        self.beta = np.zeros(x.shape[1])
        self.q = np.zeros(x.shape[1])

    def advance(self, lambdas, tol=1e-7, max_iter=100_000):
        """Continue the path over ``lambdas``; returns original-scale
        ``(slopes, intercepts)``."""
        lambdas = np.asarray(lambdas, dtype=float)
        coefs, ok = _cd_path(self.gram, self.c, self.yy, lambdas, float(tol), int(max_iter),
                             self.beta, self.q)
        if not ok.all():
            k = int(np.argmin(ok))
            raise ConvergenceError(
                f"coordinate descent did not converge in {max_iter} sweeps "
                f"at lambda={lambdas[k]}",
                coef=coefs[k] / self.scale,
                kkt_violation=kkt_violation(self.xs, self.yc, coefs[k], lambdas[k]),
            )
        slopes = coefs / self.scale
        return slopes, self.y_mean - slopes @ self.mean


def lasso_path(x, y, lambdas, tol=1e-7, max_iter=100_000):
    """Fit the path on raw ``x``/``y``; returns slopes (n_lambda x p, original
    scale) and intercepts."""
    return PathState(x, y).advance(lambdas, tol, max_iter)
