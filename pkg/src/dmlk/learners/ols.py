"""Ordinary least squares with an unpenalized intercept."""

import numpy as np

from ..errors import NotPositiveDefiniteError
from ..stochastics import chol_lower

RIDGE_JITTER = 1e-10


def _chol_solve(gram, rhs):
    L = chol_lower(gram)
    return np.linalg.solve(L.T, np.linalg.solve(L, rhs))


def _gram_is_singular(gram):
    # Relative pivot check: rounding can leave a tiny positive pivot for exactly
    # collinear columns, which chol_lower would accept.
    scale = max(float(np.max(np.diag(gram))), np.finfo(float).tiny)
    try:
        L = chol_lower(gram)
    except NotPositiveDefiniteError:
        return True
    return bool(np.min(np.diag(L)) ** 2 <= 1e-12 * scale)


def ols_fit(x, y):
    """Return ``(coef, intercept)``.

    Normal equations are solved on centered data via Cholesky. A singular or
    near-singular Gram matrix gets ``1e-10 * trace / p`` added to its diagonal.
    """
    x_mean = x.mean(axis=0)
    y_mean = y.mean()
    xc = x - x_mean
    gram = xc.T @ xc
    rhs = xc.T @ (y - y_mean)
    p = gram.shape[0]
    if p == 0:
        return np.zeros(0), float(y_mean)
    if _gram_is_singular(gram):
        jitter = RIDGE_JITTER * max(np.trace(gram) / p, 1.0)
        gram = gram + jitter * np.eye(p)
    coef = _chol_solve(gram, rhs)
    return coef, float(y_mean - x_mean @ coef)
