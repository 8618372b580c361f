"""Dense lower-triangular helpers: half-vectorization, masks, solves, Cholesky.

Lower-triangular factors are plain ``(d, d)`` float arrays whose strict upper
triangle is zero. Functions that only mask (:func:`bar`, :func:`barbar`,
:func:`dg`) also accept stacks of shape ``(..., d, d)``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.linalg import get_lapack_funcs

from .errors import DimensionError, NotPositiveDefiniteError, SingularFactorError

__all__ = [
    "vech",
    "unvech",
    "vech_indices",
    "bar",
    "dg",
    "barbar",
    "tri_solve",
    "cholesky",
    "is_lower_triangular",
]

_trtrs = get_lapack_funcs("trtrs", (np.empty(1),))


@lru_cache(maxsize=64)
def vech_indices(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column indices of the lower triangle in column-stacked order."""
    cols, rows = np.triu_indices(d)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


@lru_cache(maxsize=64)
def _lower_mask(d: int) -> np.ndarray:
    mask = np.tri(d, dtype=float)
    mask.setflags(write=False)
    return mask


def _check_square(A: np.ndarray) -> int:
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise DimensionError(f"expected square matrix, got shape {A.shape}")
    return A.shape[-1]


def vech(A) -> np.ndarray:
    """Stack the on-and-below-diagonal entries of ``A`` column by column."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got shape {A.shape}")
    rows, cols = vech_indices(_check_square(A))
    return A[rows, cols]


def _dim_from_length(k: int) -> int:
    d = int(round((np.sqrt(8 * k + 1) - 1) / 2))
    if k < 1 or d * (d + 1) // 2 != k:
        raise DimensionError(f"length {k} is not a triangular number")
    return d


def unvech(v) -> np.ndarray:
    """Inverse of :func:`vech` on lower-triangular matrices."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionError(f"expected a vector, got shape {v.shape}")
    d = _dim_from_length(v.shape[0])
    rows, cols = vech_indices(d)
    out = np.zeros((d, d))
    out[rows, cols] = v
    return out


def bar(A) -> np.ndarray:
    """Zero everything above the diagonal."""
    A = np.asarray(A, dtype=float)
    return A * _lower_mask(_check_square(A))


def dg(A) -> np.ndarray:
    """Keep only the diagonal."""
    A = np.asarray(A, dtype=float)
    d = _check_square(A)
    return A * np.eye(d)


def barbar(A) -> np.ndarray:
    """``bar(A)`` with the diagonal halved."""
    A = np.asarray(A, dtype=float)
    d = _check_square(A)
    return A * (_lower_mask(d) - 0.5 * np.eye(d))


def is_lower_triangular(A, atol: float = 0.0) -> bool:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        return False
    return bool(np.all(np.abs(np.triu(A, 1)) <= atol))


def tri_solve(T, b, transposed: bool = False) -> np.ndarray:
    """Solve ``T x = b`` (or ``T.T x = b``) for lower-triangular ``T``.

    ``b`` may be a vector of length d or a ``(d, k)`` block of right-hand sides.
    """
    T = np.asarray(T, dtype=float)
    b = np.asarray(b, dtype=float)
    d = _check_square(T)
    if T.ndim != 2 or b.shape[0] != d or b.ndim > 2:
        raise DimensionError(f"cannot solve {T.shape} factor against {b.shape}")
    x, info = _trtrs(T, b, lower=1, trans=1 if transposed else 0)
    if info > 0:
        raise SingularFactorError(f"zero diagonal entry at position {info - 1}")
    if info < 0:
        raise ValueError(f"trtrs rejected argument {-info}")
    return x


def cholesky(S, sym_tol: float = 1e-10) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got shape {S.shape}")
    _check_square(S)
    scale = max(np.max(np.abs(S)), 1.0)
    if np.max(np.abs(S - S.T)) > sym_tol * scale:
        raise NotPositiveDefiniteError("matrix is not symmetric")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from None
