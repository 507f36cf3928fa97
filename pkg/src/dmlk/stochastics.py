"""Seeded random streams and Gaussian sampling primitives.

Every random quantity in the package is drawn from a :class:`SeededStream`.
A stream wraps numpy's Philox4x64 counter-based generator; normal variates
come from numpy's ziggurat sampler. Child streams are derived with
:func:`derive_seed`, which feeds ``(parent_seed, *keys)`` through
``numpy.random.SeedSequence`` and takes the first 64-bit word of the
generated state. Monte Carlo replication ``r`` of cell ``c`` therefore uses
``derive_seed(base_seed, c, r)`` no matter which worker runs it.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache

import numpy as np

from .errors import NotPositiveDefiniteError, SpecError

_MASK64 = (1 << 64) - 1


def _key_to_int(key) -> int:
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return int(key)
    if isinstance(key, str):
        digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"unsupported stream key {key!r}")


def derive_seed(seed: int, *keys) -> int:
    """Derive a 64-bit child seed from ``seed`` and integer or string keys."""
    entropy = [int(seed) & _MASK64] + [_key_to_int(k) for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])


class SeededStream:
    """Single-owner random stream. ``position`` counts values drawn so far."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.position = 0
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def __repr__(self):
        return f"SeededStream(seed={self.seed}, position={self.position})"

    def fork(self, *keys) -> SeededStream:
        """Independent child stream; does not advance this stream."""
        return SeededStream(derive_seed(self.seed, *keys))

    def _advance(self, size) -> None:
        self.position += int(np.prod(size))

    def standard_normal(self, size) -> np.ndarray:
        self._advance(size)
        return self._gen.standard_normal(size)

    def uniform(self, size) -> np.ndarray:
        self._advance(size)
        return self._gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        self._advance(n)
        return self._gen.permutation(n)

    def seeds(self, k: int) -> np.ndarray:
        """``k`` raw 64-bit words, used to seed compiled inner loops."""
        self._advance(k)
        return self._gen.integers(0, 2**64, size=k, dtype=np.uint64, endpoint=False)


def toeplitz_sigma(p: int, rho: float) -> np.ndarray:
    """AR(1)-type covariance with entries ``rho ** |j - k|``."""
    if p < 1:
        raise SpecError(f"dimension must be >= 1, got {p}")
    if not 0.0 <= rho < 1.0:
        raise SpecError(f"rho must lie in [0, 1), got {rho}")
    lags = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    return np.power(float(rho), lags)


def chol_lower(m: np.ndarray) -> np.ndarray:
    """Unpivoted Cholesky factor ``L`` with ``L @ L.T == m``.

    Raises :class:`NotPositiveDefiniteError` at the first non-positive pivot
    instead of regularizing.
    """
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise SpecError(f"expected a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12):
        raise SpecError("matrix is not symmetric")
    p = a.shape[0]
    L = np.zeros_like(a)
    for j in range(p):
        row = L[j, :j]
        d = a[j, j] - row @ row
        if not d > 0.0:
            raise NotPositiveDefiniteError(j, float(d))
        L[j, j] = np.sqrt(d)
        if j + 1 < p:
            L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ row) / L[j, j]
    return L


@lru_cache(maxsize=16)
def _toeplitz_factor(p: int, rho: float) -> np.ndarray:
    L = chol_lower(toeplitz_sigma(p, rho))
    L.flags.writeable = False
    return L


def sample_std_normal(n: int, stream: SeededStream) -> np.ndarray:
    if n < 1:
        raise SpecError(f"n must be >= 1, got {n}")
    return stream.standard_normal(n)


def sample_mvn(n: int, sigma: np.ndarray, stream: SeededStream, factor=None) -> np.ndarray:
    """Draw ``n`` rows from N(0, sigma); pass ``factor`` to reuse a Cholesky factor."""
    if n < 1:
        raise SpecError(f"n must be >= 1, got {n}")
    L = chol_lower(sigma) if factor is None else factor
    z = stream.standard_normal((n, L.shape[0]))
    return z @ L.T


def balanced_assignment(n: int, k: int, stream: SeededStream) -> np.ndarray:
    """Random partition of ``range(n)`` into ``k`` groups whose sizes differ by at most one.

    Returns group labels in ``0 .. k-1``: a random permutation of the
    round-robin labels ``i % k``.
    """
    if k < 2 or k > n:
        raise SpecError(f"need 2 <= k <= n, got k={k}, n={n}")
    labels = np.arange(n) % k
    return labels[stream.permutation(n)]
