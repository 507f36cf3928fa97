"""Cross-fitted partialling-out estimator for the partially linear model.

For residuals ``u = D - m_hat(X)`` and ``v = Y - l_hat(X)`` computed out of
fold, the empirical score ``mean(u * (v - theta * u))`` is affine in theta
with slope ``j_hat = -mean(u**2)``. The condition number
``kappa = 1 / |j_hat|`` measures how flat the score is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from . import learners as _learners
from .dgp import Dataset, outcome_nuisance
from .errors import ConvergenceError, DataError, DegenerateScoreError, FitError, SpecError
from .learners import LearnerSpec
from .stochastics import SeededStream, balanced_assignment


class Regime(str, Enum):
    WELL = "well-conditioned"
    MODERATE = "moderately ill-conditioned"
    SEVERE = "severely ill-conditioned"

    @property
    def interval(self) -> str:
        return {"well-conditioned": "<1", "moderately ill-conditioned": "[1,2)",
                "severely ill-conditioned": ">=2"}[self.value]


# Lower bounds are closed: kappa == 1 is moderate, kappa == 2 is severe.
MODERATE_KAPPA = 1.0
SEVERE_KAPPA = 2.0


def classify_regime(kappa: float) -> Regime:
    if not (kappa > 0 and math.isfinite(kappa)):
        raise SpecError(f"kappa must be positive and finite, got {kappa}")
    if kappa < MODERATE_KAPPA:
        return Regime.WELL
    if kappa < SEVERE_KAPPA:
        return Regime.MODERATE
    return Regime.SEVERE


@dataclass(frozen=True, eq=False)
class FoldMap:
    """Fold label in ``0 .. k-1`` for every observation."""

    assignment: np.ndarray
    k: int

    def sizes(self):
        return np.bincount(self.assignment, minlength=self.k)


def make_folds(n: int, k: int, stream: SeededStream) -> FoldMap:
    return FoldMap(balanced_assignment(n, k, stream), k)


class _FixedPredictor:
    def __init__(self, fn):
        self.fn = fn

    def predict(self, x):
        return self.fn(x)


class FunctionLearner:
    """Learner that ignores its training data and predicts with ``fn(x)``.

    Used to plug known nuisance functions into the cross-fitting loop.
    """

    def __init__(self, fn):
        self.fn = fn

    def fit(self, x, y, stream):
        return _FixedPredictor(self.fn)


def oracle_learners(ds: Dataset):
    """(m, l) learners returning the true nuisance functions of a synthetic sample."""
    if ds.oracle is None:
        raise DataError("dataset has no oracle")
    beta, theta0, gamma = ds.oracle.beta_d, ds.oracle.theta0, ds.oracle.gamma
    m = FunctionLearner(lambda x: x @ beta)
    ell = FunctionLearner(lambda x: theta0 * (x @ beta) + outcome_nuisance(gamma, x))
    return m, ell


def _fit_role(learner, x, y, stream):
    if isinstance(learner, LearnerSpec):
        return _learners.fit(learner, x, y, stream)
    return learner.fit(x, y, stream)


def crossfit_residuals(ds: Dataset, learner, folds: FoldMap, stream: SeededStream):
    """Out-of-fold residuals ``(u_hat, v_hat)``.

    ``learner`` is a :class:`LearnerSpec` used for both nuisances, or a pair
    ``(m_learner, l_learner)`` whose entries are specs or objects with a
    ``fit(x, y, stream)`` method returning something with ``predict``.
    """
    if isinstance(learner, (tuple, list)):
        m_learner, l_learner = learner
    else:
        m_learner = l_learner = learner
    if folds.assignment.shape != (ds.n,):
        raise SpecError("fold map does not match the dataset")
    u_hat = np.empty(ds.n)
    v_hat = np.empty(ds.n)
    for k in range(folds.k):
        test = folds.assignment == k
        train = ~test
        try:
            m_model = _fit_role(m_learner, ds.x[train], ds.d[train], stream.fork(k, "m"))
            l_model = _fit_role(l_learner, ds.x[train], ds.y[train], stream.fork(k, "l"))
        except FitError as exc:
            raise FitError(str(exc), fold=k) from exc
        except ConvergenceError as exc:
            raise FitError(str(exc), fold=k) from exc
        u_hat[test] = ds.d[test] - m_model.predict(ds.x[test])
        v_hat[test] = ds.y[test] - l_model.predict(ds.x[test])
    return u_hat, v_hat


def estimate_theta(u_hat, v_hat) -> float:
    su2 = float(np.dot(u_hat, u_hat))
    if su2 == 0.0:
        raise DegenerateScoreError("sum of squared treatment residuals is zero")
    return float(np.dot(u_hat, v_hat)) / su2


def jacobian_and_kappa(u_hat):
    u_hat = np.asarray(u_hat, dtype=float)
    su2 = float(np.dot(u_hat, u_hat))
    if su2 == 0.0:
        raise DegenerateScoreError("sum of squared treatment residuals is zero")
    n = u_hat.shape[0]
    return -su2 / n, n / su2


def se_dml(u_hat, eps_hat, kappa, n) -> float:
    """Plug-in SE: ``kappa / sqrt(n) * sqrt(mean(u^2 eps^2))``."""
    if n < 2:
        raise SpecError(f"n must be >= 2, got {n}")
    u_hat = np.asarray(u_hat, dtype=float)
    eps_hat = np.asarray(eps_hat, dtype=float)
    return float(kappa / math.sqrt(n) * math.sqrt(np.mean(u_hat**2 * eps_hat**2)))


# Wichura (1988), algorithm AS 241 (PPND16): relative accuracy about 1e-16.
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _poly(coefs, x):
    acc = 0.0
    for c in reversed(coefs):
        acc = acc * x + c
    return acc


def normal_quantile(prob: float) -> float:
    """Inverse standard normal CDF."""
    if not 0.0 < prob < 1.0:
        raise SpecError(f"probability must lie in (0, 1), got {prob}")
    q = prob - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(_A, r) / _poly(_B, r)
    r = prob if q < 0 else 1.0 - prob
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        val = _poly(_C, r) / _poly(_D, r)
    else:
        r -= 5.0
        val = _poly(_E, r) / _poly(_F, r)
    return -val if q < 0 else val


def confidence_interval(theta_hat: float, se: float, alpha: float = 0.05):
    if se < 0:
        raise SpecError(f"se must be >= 0, got {se}")
    if not 0.0 < alpha < 1.0:
        raise SpecError(f"alpha must lie in (0, 1), got {alpha}")
    z = normal_quantile(1.0 - alpha / 2.0)
    return theta_hat - z * se, theta_hat + z * se


@dataclass(frozen=True, eq=False)
class DmlFit:
    theta_hat: float
    u_hat: np.ndarray
    v_hat: np.ndarray
    eps_hat: np.ndarray
    j_hat: float
    kappa: float
    se: float
    ci: tuple
    alpha: float
    fold_map: FoldMap
    learner: object

    @property
    def n(self):
        return self.u_hat.shape[0]

    @property
    def regime(self) -> Regime:
        return classify_regime(self.kappa)

    def score(self, theta=None) -> float:
        """Empirical score average at ``theta`` (defaults to the estimate)."""
        theta = self.theta_hat if theta is None else theta
        return float(np.mean(self.u_hat * (self.v_hat - theta * self.u_hat)))

    def t_stat(self, theta0: float) -> float:
        return (self.theta_hat - theta0) / self.se


def _is_degenerate(u_hat, d):
    scale = max(float(np.max(np.abs(d))), np.finfo(float).tiny)
    return float(np.mean(u_hat**2)) <= (64 * np.finfo(float).eps * scale) ** 2


def run_dml(ds: Dataset, learner, k: int = 5, alpha: float = 0.05,
            stream: Optional[SeededStream] = None) -> DmlFit:
    """Cross-fit nuisances over ``k`` folds and assemble the full fit."""
    if stream is None:
        raise SpecError("run_dml needs an explicit SeededStream")
    if ds.n < 2 * k:
        raise SpecError(f"need n >= 2k = {2 * k}, got n = {ds.n}")
    folds = make_folds(ds.n, k, stream.fork("folds"))
    u_hat, v_hat = crossfit_residuals(ds, learner, folds, stream.fork("nuisance"))
    if _is_degenerate(u_hat, ds.d):
        raise DegenerateScoreError(
            "treatment residuals are numerically zero; kappa is undefined "
            "(is D a function of X?)"
        )
    theta_hat = estimate_theta(u_hat, v_hat)
    j_hat, kappa = jacobian_and_kappa(u_hat)
    eps_hat = v_hat - theta_hat * u_hat
    se = se_dml(u_hat, eps_hat, kappa, ds.n)
    ci = confidence_interval(theta_hat, se, alpha)
    return DmlFit(theta_hat, u_hat, v_hat, eps_hat, j_hat, kappa, se, ci, alpha, folds, learner)


@dataclass(frozen=True)
class LinearizationParts:
    """``theta_hat - theta0 = kappa * (s_n + b_n) + r_n``."""

    s_n: float
    b_n: float
    r_n: float
    kappa: float


def decompose_linearization(ds: Dataset, fit: DmlFit) -> LinearizationParts:
    """Split the estimation error into sampling, nuisance and remainder parts.

    ``s_n`` is the score average at the true nuisances, ``b_n`` the shift from
    plugging in the cross-fitted ones. The score is affine in theta, so the
    remainder is zero up to rounding.
    """
    if ds.oracle is None:
        raise DataError("linearization needs the true nuisance functions (oracle)")
    theta0 = ds.oracle.theta0
    u0 = ds.d - ds.oracle.true_m
    s_n = float(np.mean(u0 * (ds.y - ds.oracle.true_l - theta0 * u0)))
    psi_hat = fit.score(theta0)
    b_n = psi_hat - s_n
    r_n = (fit.theta_hat - theta0) - fit.kappa * (s_n + b_n)
    return LinearizationParts(s_n, b_n, r_n, fit.kappa)


def population_moment(ds: Dataset):
    """Sample mean of ``(Y~ - theta0 D~) D~`` with oracle residuals, and its MC standard error."""
    if ds.oracle is None:
        raise DataError("population moment needs the oracle")
    d_res = ds.d - ds.oracle.true_m
    y_res = ds.y - ds.oracle.true_l
    summand = (y_res - ds.oracle.theta0 * d_res) * d_res
    return float(summand.mean()), float(summand.std(ddof=1) / math.sqrt(ds.n))


def orthogonality_derivative(ds: Dataset, h_g, h_m, t: float = 1e-4):
    """Central-difference derivative of the mean score along ``eta0 + t*h``.

    Returns ``(derivative, mc_se)`` where the standard error comes from the
    per-observation derivative ``-h_m eps + (D - m0)(theta0 h_m - h_g)``.
    """
    if ds.oracle is None:
        raise DataError("orthogonality check needs the oracle")
    theta0 = ds.oracle.theta0
    hg = h_g(ds.x)
    hm = h_m(ds.x)

    def mean_score(step):
        u = ds.d - ds.oracle.true_m - step * hm
        return float(np.mean(u * (ds.y - ds.oracle.true_l - step * hg - theta0 * u)))

    deriv = (mean_score(t) - mean_score(-t)) / (2 * t)
    eps = ds.y - ds.oracle.true_l - theta0 * (ds.d - ds.oracle.true_m)
    influence = -hm * eps + (ds.d - ds.oracle.true_m) * (theta0 * hm - hg)
    return deriv, float(influence.std(ddof=1) / math.sqrt(ds.n))
