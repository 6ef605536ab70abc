"""Small shared linear-algebra helpers."""

from __future__ import annotations

import numpy as np

__all__ = ["SingularSystemError", "solve_sym", "sym_sqrt", "clamp_psd"]

RESIDUAL_TOL = 1e-8
RIDGE_SCALE = 1e-10


class SingularSystemError(RuntimeError):
    pass


def solve_sym(A: np.ndarray, b: np.ndarray, context: str = "system"):
    """Solve the symmetric system A x = b with a ridge fallback.

    If the plain solve fails or its relative residual exceeds 1e-8, re-solve
    with A + lambda I, lambda = 1e-10 tr(A)/n, and report regularized=True.
    Returns (x, regularized).
    """
    n = A.shape[0]
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), False
    try:
        x = np.linalg.solve(A, b)
        if np.isfinite(x).all():
            residual = np.linalg.norm(A @ x - b)
            if residual <= RESIDUAL_TOL * bnorm:
                return x, False
    except np.linalg.LinAlgError:
        pass
    lam = RIDGE_SCALE * float(np.trace(A)) / n
    try:
        x = np.linalg.solve(A + lam * np.eye(n), b)
    except np.linalg.LinAlgError as err:
        raise SingularSystemError(
            f"{context}: singular even after ridge regularization"
        ) from err
    if not np.isfinite(x).all():
        raise SingularSystemError(
            f"{context}: non-finite solution after ridge regularization"
        )
    return x, True


def sym_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root; negative eigenvalues clamped to zero."""
    sym = 0.5 * (matrix + matrix.T)
    w, v = np.linalg.eigh(sym)
    w = np.clip(w, 0.0, None)
    root = (v * np.sqrt(w)) @ v.T
    return 0.5 * (root + root.T)


def clamp_psd(mats: np.ndarray, tol_flag: float = 1e-6):
    """Clamp eigenvalues of a stack (..., d, d) to >= 0.

    Returns (clamped, changed) where changed is True when any eigenvalue
    moved by more than ``tol_flag``.
    """
    sym = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    w, v = np.linalg.eigh(sym)
    clipped = np.clip(w, 0.0, None)
    changed = bool(np.any(clipped - w > tol_flag))
    out = np.einsum("...ij,...j,...kj->...ik", v, clipped, v)
    # re-symmetrize: the reconstruction is symmetric only to rounding
    return 0.5 * (out + np.swapaxes(out, -1, -2)), changed
