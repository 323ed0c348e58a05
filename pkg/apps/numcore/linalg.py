"""Cholesky factorization and triangular solves with reverse-mode rules."""

from __future__ import annotations

import numpy as np
from scipy import linalg

from apps.shared.errors import DimensionError, NotPositiveDefiniteError, SingularError

from . import ops
from .ops import _record
from .tensor import Tensor, as_tensor


def _phi(a: np.ndarray) -> np.ndarray:
    """Lower triangle with the diagonal halved."""
    out = np.tril(a)
    out[np.diag_indices_from(out)] *= 0.5
    return out


def cholesky(a: Tensor) -> Tensor:
    """Lower factor L with L·Lᵀ = a; only the lower triangle of ``a`` is read."""
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"cholesky needs a square matrix, got {a.shape}")
    try:
        chol = linalg.cholesky(a.value, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefiniteError(f"cholesky failed: {exc}") from exc

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        # Symmetrized form of the standard rule: Ā = ½(S + Sᵀ), S = L⁻ᵀ Φ(LᵀL̄) L⁻¹
        p = _phi(chol.T @ np.tril(g))
        s = linalg.solve_triangular(chol, p, lower=True, trans="T")
        s = linalg.solve_triangular(chol, s.T, lower=True, trans="T").T
        return (0.5 * (s + s.T),)

    return _record("cholesky", chol, (a,), vjp)


def tri_solve(chol: Tensor, b: Tensor, transpose: bool = False) -> Tensor:
    """Solve L·x = b (or Lᵀ·x = b) for lower-triangular L."""
    chol, b = as_tensor(chol), as_tensor(b)
    if chol.ndim != 2 or chol.shape[0] != chol.shape[1]:
        raise DimensionError(f"tri_solve needs a square factor, got {chol.shape}")
    if b.shape[0] != chol.shape[0]:
        raise DimensionError(f"tri_solve: factor {chol.shape} vs right-hand side {b.shape}")
    lv = np.tril(chol.value)
    if np.any(np.diag(lv) == 0.0):
        raise SingularError("tri_solve: zero on the diagonal")
    trans = "T" if transpose else "N"
    x = linalg.solve_triangular(lv, b.value, lower=True, trans=trans)

    def vjp(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        other = "N" if transpose else "T"
        b_bar = linalg.solve_triangular(lv, g, lower=True, trans=other)
        if transpose:
            l_bar = -np.tril(_outer(x, b_bar))
        else:
            l_bar = -np.tril(_outer(b_bar, x))
        return (l_bar, b_bar)

    return _record("tri_solve", x, (chol, b), vjp)


def _outer(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    if u.ndim == 1:
        return np.outer(u, v)
    return u @ v.T


def log_det_from_chol(chol: Tensor) -> Tensor:
    return ops.mul(2.0, ops.sum(ops.log(ops.diag_part(chol))))


def cho_solve(chol: Tensor, b: Tensor) -> Tensor:
    """(L·Lᵀ)⁻¹ b through two triangular solves."""
    return tri_solve(chol, tri_solve(chol, b), transpose=True)
