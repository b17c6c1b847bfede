"""Small linear-algebra helpers shared across modules."""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

_transition_cache: dict[tuple[bytes, tuple[int, ...], float], np.ndarray] = {}


def cached_expm(a: np.ndarray, t: float) -> np.ndarray:
    """``expm(a * t)``, memoized; the same matrix is reused every filter step."""
    key = (a.tobytes(), a.shape, float(t))
    out = _transition_cache.get(key)
    if out is None:
        out = expm(np.asarray(a, dtype=float) * t)
        _transition_cache[key] = out
    return out


def orth_basis(vectors: np.ndarray, rel_tol: float = 1e-9) -> np.ndarray:
    """Orthonormal basis (columns) of the span of the given column vectors.

    Singular values below ``rel_tol`` times the largest one are treated as
    zero.
    """
    m = np.atleast_2d(np.asarray(vectors, dtype=float))
    if m.size == 0:
        return np.zeros((m.shape[0], 0))
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((m.shape[0], 0))
    r = int(np.sum(s > rel_tol * s[0]))
    return u[:, :r]


def numerical_rank(m: np.ndarray, threshold: float) -> int:
    """Number of singular values above an absolute threshold."""
    s = np.linalg.svd(np.asarray(m, dtype=float), compute_uv=False)
    return int(np.sum(s > threshold))


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def van_loan_discretization(a_t: np.ndarray, q: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact one-step transition ``F = expm(a_t dt)`` and process-noise
    covariance ``Qd = int_0^dt expm(a_t s) q expm(a_t s)^T ds``."""
    d = a_t.shape[0]
    block = np.zeros((2 * d, 2 * d))
    block[:d, :d] = a_t
    block[:d, d:] = q
    block[d:, d:] = -a_t.T
    e = expm(block * dt)
    f = e[:d, :d]
    qd = e[:d, d:] @ f.T
    return f, symmetrize(qd)


def drift_step(a: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Pair ``(expm(a dt), int_0^dt expm(a s) ds)`` for stepping linear ODEs
    with piecewise-constant forcing."""
    d = a.shape[0]
    e_big = np.zeros((2 * d, 2 * d))
    e_big[:d, :d] = a
    e_big[:d, d:] = np.eye(d)
    e = expm(e_big * dt)
    return e[:d, :d], e[:d, d:]
