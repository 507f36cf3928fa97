"""Synthetic partially linear designs with overlap calibrated to a target R^2(D|X).

    X ~ N(0, Sigma(rho)),   Sigma_jk = rho^|j-k|
    D = X @ beta_d + U,     U ~ N(0, sigma_u2)
    Y = theta0 * D + sum_j gamma_j sin(X_j) + eps,   eps ~ N(0, 1)

``sigma_u2`` is solved from the target R^2 of the treatment regression.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import DataError, SpecError
from .stochastics import SeededStream, _toeplitz_factor, sample_mvn, toeplitz_sigma

LOWDIM_P = 10
LINEAR_BETA = (1.0, 0.8, 0.6, 0.4, 0.2)
GAMMA = (1.0, 0.5, 0.25, 0.125, 0.0625)
GEOMETRIC_RATE = 0.7


class Design(str, Enum):
    LOWDIM = "lowdim"
    HIGHDIM = "highdim"


class BetaPattern(str, Enum):
    # (1, .8, .6, .4, .2, 0, ...)
    LINEAR = "linear"
    # 0.7 ** (j - 1)
    GEOMETRIC = "geometric"


def _padded(values, p):
    out = np.zeros(p)
    k = min(p, len(values))
    out[:k] = values[:k]
    return out


def beta_for(pattern: BetaPattern, p: int) -> np.ndarray:
    pattern = BetaPattern(pattern)
    if pattern is BetaPattern.LINEAR:
        return _padded(LINEAR_BETA, p)
    return GEOMETRIC_RATE ** np.arange(p, dtype=float)


@dataclass(frozen=True, eq=False)
class DgpSpec:
    design: Design
    p: int
    rho: float
    beta_d: np.ndarray
    gamma: np.ndarray
    theta0: float
    r2_target: float
    sigma_u2: float
    beta_pattern: BetaPattern = BetaPattern.LINEAR

    @property
    def sigma(self) -> np.ndarray:
        return toeplitz_sigma(self.p, self.rho)


@dataclass(frozen=True, eq=False)
class Oracle:
    """True nuisance values attached to a synthetic sample."""

    theta0: float
    beta_d: np.ndarray
    gamma: np.ndarray
    true_m: np.ndarray  # X @ beta_d
    true_l: np.ndarray  # theta0 * X @ beta_d + gamma' sin(X)
    eps: np.ndarray
    u: np.ndarray


@dataclass(frozen=True, eq=False)
class Dataset:
    y: np.ndarray
    d: np.ndarray
    x: np.ndarray
    oracle: Optional[Oracle] = field(default=None)

    def __post_init__(self):
        y, d, x = (np.asarray(a, dtype=float) for a in (self.y, self.d, self.x))
        if x.ndim != 2:
            raise DataError(f"x must be 2-D, got shape {x.shape}")
        if y.shape != (x.shape[0],) or d.shape != (x.shape[0],):
            raise DataError(
                f"inconsistent shapes: y {y.shape}, d {d.shape}, x {x.shape}"
            )
        for name, a in (("y", y), ("d", d), ("x", x)):
            if not np.all(np.isfinite(a)):
                raise DataError(f"{name} contains non-finite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


def calibrate_sigma_u(beta_d, sigma, r2_target: float) -> float:
    """Treatment noise variance giving R^2(D|X) = r2_target."""
    if not 0.0 < r2_target < 1.0:
        raise SpecError(f"r2_target must lie in (0, 1), got {r2_target}")
    beta_d = np.asarray(beta_d, dtype=float)
    q = float(beta_d @ np.asarray(sigma) @ beta_d)
    if not q > 0.0:
        raise SpecError("degenerate design: beta' Sigma beta must be positive")
    return q * (1.0 - r2_target) / r2_target


def make_spec(design, p: int, rho: float, r2_target: float, beta_pattern=None) -> DgpSpec:
    """Fully populated design with theta0 = 1.

    The low-dimensional design requires ``p == 10``. ``beta_pattern`` defaults
    to ``linear`` for the low-dimensional design and ``geometric`` for the
    high-dimensional one.
    """
    design = Design(design)
    if design is Design.LOWDIM and p != LOWDIM_P:
        raise SpecError(f"low-dimensional design requires p = {LOWDIM_P}, got {p}")
    if p < 1:
        raise SpecError(f"p must be >= 1, got {p}")
    if beta_pattern is None:
        beta_pattern = BetaPattern.LINEAR if design is Design.LOWDIM else BetaPattern.GEOMETRIC
    beta_pattern = BetaPattern(beta_pattern)
    beta_d = beta_for(beta_pattern, p)
    sigma = toeplitz_sigma(p, rho)
    return DgpSpec(
        design=design,
        p=p,
        rho=float(rho),
        beta_d=beta_d,
        gamma=_padded(GAMMA, p),
        theta0=1.0,
        r2_target=float(r2_target),
        sigma_u2=calibrate_sigma_u(beta_d, sigma, r2_target),
        beta_pattern=beta_pattern,
    )


def outcome_nuisance(spec_or_gamma, x) -> np.ndarray:
    gamma = getattr(spec_or_gamma, "gamma", spec_or_gamma)
    return np.sin(x) @ gamma


def gen_sample(spec: DgpSpec, n: int, stream: SeededStream) -> Dataset:
    if n < 2:
        raise SpecError(f"n must be >= 2, got {n}")
    x = sample_mvn(n, None, stream, factor=_toeplitz_factor(spec.p, spec.rho))
    u = np.sqrt(spec.sigma_u2) * stream.standard_normal(n)
    eps = stream.standard_normal(n)
    m = x @ spec.beta_d
    g = outcome_nuisance(spec, x)
    d = m + u
    y = d * spec.theta0 + g + eps
    oracle = Oracle(
        theta0=spec.theta0,
        beta_d=spec.beta_d,
        gamma=spec.gamma,
        true_m=m,
        true_l=spec.theta0 * m + g,
        eps=eps,
        u=u,
    )
    return Dataset(y=y, d=d, x=x, oracle=oracle)


def realized_r2(ds: Dataset) -> float:
    """Sample Var(X beta_d) / Var(D), both with the 1/(n-1) divisor."""
    if ds.oracle is None:
        raise DataError("realized R^2 needs the true treatment coefficients (oracle)")
    fitted = ds.x @ ds.oracle.beta_d
    var_d = np.var(ds.d, ddof=1)
    if var_d == 0.0:
        raise DataError("treatment has zero sample variance")
    return float(np.var(fitted, ddof=1) / var_d)
