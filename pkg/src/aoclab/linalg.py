"""Small dense linear-algebra helpers: scale-invariant rank and null spaces."""

import numpy as np

# Relative singular-value threshold used for every rank decision in the
# package: sigma is "zero" when sigma < RANK_RTOL * sigma_max (or sigma_max
# itself is zero).
RANK_RTOL = 1e-8


def rank_tolerance(singular_values: np.ndarray, rtol: float = RANK_RTOL) -> float:
    """Absolute cutoff below which singular values count as zero."""
    s = np.asarray(singular_values, dtype=float)
    smax = float(s[0]) if s.size else 0.0
    if smax == 0.0:
        return rtol
    return rtol * smax


def numeric_rank(matrix: np.ndarray, rtol: float = RANK_RTOL) -> tuple[int, np.ndarray]:
    """Rank of ``matrix`` with a relative singular-value cutoff.

    Returns ``(rank, singular_values)``; an empty matrix has rank 0.
    """
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    if a.size == 0:
        return 0, np.zeros(0)
    s = np.linalg.svd(a, compute_uv=False)
    tol = rank_tolerance(s, rtol)
    return int(np.sum(s >= tol)), s


def left_null_basis(matrix: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal rows spanning the left null space of ``matrix``.

    A vector xi is in the left null space when ``xi @ matrix ~ 0``; these are
    the left singular vectors whose singular values fall below the relative
    cutoff.
    """
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    u, s, _ = np.linalg.svd(a)
    tol = rank_tolerance(s, rtol)
    rank = int(np.sum(s >= tol))
    return u[:, rank:].T.copy()


def solve_least_squares(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimum-norm least-squares solution of ``a x = b`` and its residual norm."""
    x, _, _, _ = np.linalg.lstsq(a, b, rcond=None)
    res = float(np.linalg.norm(a @ x - b))
    return x, res
