"""Covariance estimation from quadratic variation.

The realized quadratic covariation of a trajectory,
sum_l (x_{l+1} - x_l)(x_{l+1} - x_l)^T, converges to int_0^T Sigma(x_t) dt and
does not depend on the drift, so Sigma can be estimated before (and
independently of) the drift.

* Constant Sigma: average QV / T over trajectories, symmetrized and
  eigenvalue-clamped to PSD.
* State-dependent Sigma: each of the (1+d)d/2 upper-triangle entries is
  regressed on the basis, minimizing per-transition squared residuals
  (dx_k dx_j - sum_i c_i psi_i(x) dt)^2.  The fitted matrix function is
  symmetrized by construction and clamped PSD pointwise on evaluation.

The diffusion coefficient sigma_hat is the symmetric spectral square root of
the estimated Sigma.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .basis import BasisSet, make_basis, spec_from_dict, spec_to_dict
from .linalg import clamp_psd, solve_sym, sym_sqrt
from .model import TrajectoryBundle, transition_chunks

__all__ = [
    "CovarianceEstimate",
    "write_covariance_estimate",
    "read_covariance_estimate",
    "quadratic_variation",
    "estimate_constant",
    "estimate_state_dependent",
    "spectral_sqrt",
]

CLAMP_FLAG_TOL = 1e-6


def quadratic_variation(bundle: TrajectoryBundle) -> np.ndarray:
    """Per-trajectory realized covariation matrices, shape (M, d, d)."""
    dx = np.diff(bundle.states, axis=1)
    return np.einsum("mlk,mlj->mkj", dx, dx)


def _upper_triangle_indices(d: int):
    return [(k, j) for k in range(d) for j in range(k, d)]


class CovarianceEstimate:
    """Constant matrix or per-entry basis expansions of Sigma(x).

    State-dependent estimates store one coefficient vector per upper-triangle
    entry (k <= j), ordered (0,0), (0,1), ..., (0,d-1), (1,1), ...; the (j,k)
    and (k,j) entries share one expansion, so the evaluated matrix is
    symmetric by construction.  Evaluation clamps eigenvalues to >= 0;
    ``clamped`` reports whether clamping ever moved an eigenvalue by more
    than 1e-6.
    """

    def __init__(self, dim: int, matrix: np.ndarray | None = None,
                 basis: BasisSet | None = None,
                 coeffs: np.ndarray | None = None,
                 regularized: bool = False):
        self.dim = dim
        self.regularized = regularized
        self.clamped = False
        if matrix is not None:
            sym = 0.5 * (matrix + matrix.T)
            w, v = np.linalg.eigh(sym)
            self.clamped = bool(np.any(-w > CLAMP_FLAG_TOL))
            if w.min() < 0.0:
                sym = (v * np.clip(w, 0.0, None)) @ v.T
                sym = 0.5 * (sym + sym.T)
            self.matrix = sym
            self.form = "constant"
            self.basis = None
            self.coeffs = None
        else:
            if basis is None or coeffs is None:
                raise ValueError("state-dependent estimate needs basis+coeffs")
            if coeffs.shape != (basis.n, len(_upper_triangle_indices(dim))):
                raise ValueError("coefficient block shape mismatch")
            self.form = "state"
            self.matrix = None
            self.basis = basis
            self.coeffs = np.asarray(coeffs, dtype=np.float64)

    @property
    def is_diagonal(self) -> bool:
        if self.form == "constant":
            off = self.matrix - np.diag(np.diag(self.matrix))
            return bool(np.all(off == 0.0))
        if self.dim == 1:
            return True
        entries = _upper_triangle_indices(self.dim)
        off = [i for i, (k, j) in enumerate(entries) if k != j]
        return bool(np.all(self.coeffs[:, off] == 0.0))

    def raw_matrix_at(self, points: np.ndarray) -> np.ndarray:
        """Fitted Sigma(x) before PSD clamping, shape (P, d, d)."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None] if self.dim == 1 else pts[None, :]
        P = pts.shape[0]
        if self.form == "constant":
            return np.broadcast_to(self.matrix, (P, self.dim, self.dim)).copy()
        psi = self.basis.design_matrix(pts)
        vals = psi @ self.coeffs  # (P, n_entries)
        out = np.empty((P, self.dim, self.dim))
        for i, (k, j) in enumerate(_upper_triangle_indices(self.dim)):
            out[:, k, j] = vals[:, i]
            out[:, j, k] = vals[:, i]
        return out

    def matrix_at(self, points: np.ndarray) -> np.ndarray:
        """Sigma_hat(x); symmetric PSD (eigenvalues clamped to >= 0)."""
        raw = self.raw_matrix_at(points)
        if self.form == "constant":
            return raw
        if self.dim == 1:
            clamped = np.maximum(raw, 0.0)
            if np.any(raw - clamped > CLAMP_FLAG_TOL):
                self.clamped = True
            return clamped
        out, changed = clamp_psd(raw, CLAMP_FLAG_TOL)
        if changed:
            self.clamped = True
        return out

    def sqrt_at(self, points: np.ndarray) -> np.ndarray:
        """sigma_hat(x): symmetric PSD root with sigma sigma^T = Sigma_hat."""
        mats = self.matrix_at(points)
        w, v = np.linalg.eigh(mats)
        w = np.clip(w, 0.0, None)
        out = np.einsum("...ij,...j,...kj->...ik", v, np.sqrt(w), v)
        return 0.5 * (out + np.swapaxes(out, -1, -2))


def estimate_constant(bundle: TrajectoryBundle) -> CovarianceEstimate:
    """Sigma_hat = mean over trajectories of QV / T, clamped PSD."""
    qv = quadratic_variation(bundle)
    mean = qv.mean(axis=0) / bundle.grid.horizon
    return CovarianceEstimate(bundle.dim, matrix=mean)


def estimate_state_dependent(bundle: TrajectoryBundle,
                             basis: BasisSet) -> CovarianceEstimate:
    """Least-squares fit of each Sigma entry on the basis.

    For entry (k, j) the coefficients minimize
    sum_{l,m} (dx_k dx_j - sum_i c_i psi_i(x_l^m) dt_l)^2, a linear
    regression whose Gram matrix is shared across entries.
    """
    d, n = bundle.dim, basis.n
    entries = _upper_triangle_indices(d)
    G = np.zeros((n, n))
    R = np.zeros((n, len(entries)))
    for x, dx, dt, _ in transition_chunks(bundle):
        psi = basis.design_matrix(x)
        wpsi = dt[:, None] * psi
        G += wpsi.T @ wpsi
        y = np.empty((x.shape[0], len(entries)))
        for i, (k, j) in enumerate(entries):
            y[:, i] = dx[:, k] * dx[:, j]
        R += wpsi.T @ y
    coeffs = np.empty((n, len(entries)))
    regularized = False
    for i, (k, j) in enumerate(entries):
        c, reg = solve_sym(G, R[:, i],
                           context=f"covariance entry ({k+1},{j+1})")
        coeffs[:, i] = c
        regularized = regularized or reg
    return CovarianceEstimate(d, basis=basis, coeffs=coeffs,
                              regularized=regularized)


def spectral_sqrt(estimate: CovarianceEstimate, x) -> np.ndarray:
    """sigma_hat at a single state, via eigendecomposition of Sigma_hat."""
    pt = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if estimate.form == "constant":
        return sym_sqrt(estimate.matrix)
    return estimate.sqrt_at(pt.reshape(1, estimate.dim))[0]


# ---------------------------------------------------------------------------
# Covariance estimate files (mirrors the drift estimate format; entry blocks
# are ordered over the upper triangle k <= j)

_COV_MAGIC = b"SDEC"
_COV_VERSION = 1


def write_covariance_estimate(path, estimate: CovarianceEstimate) -> None:
    header = {"d": estimate.dim, "form": estimate.form,
              "regularized": estimate.regularized}
    if estimate.form == "state":
        header["n"] = estimate.basis.n
        header["basis"] = spec_to_dict(estimate.basis.spec)
        header["entries"] = _upper_triangle_indices(estimate.dim)
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(_COV_MAGIC)
        fh.write(struct.pack("<2I", _COV_VERSION, len(blob)))
        fh.write(blob)
        if estimate.form == "constant":
            fh.write(estimate.matrix.astype("<f8").tobytes())
        else:
            fh.write(estimate.coeffs.astype("<f8").tobytes())


def read_covariance_estimate(path) -> CovarianceEstimate:
    with open(path, "rb") as fh:
        if fh.read(4) != _COV_MAGIC:
            raise ValueError("not a covariance estimate file")
        version, hlen = struct.unpack("<2I", fh.read(8))
        if version != _COV_VERSION:
            raise ValueError(f"unsupported covariance file version {version}")
        header = json.loads(fh.read(hlen).decode())
        d = header["d"]
        if header["form"] == "constant":
            mat = np.frombuffer(fh.read(8 * d * d), dtype="<f8").reshape(d, d)
            return CovarianceEstimate(d, matrix=mat.copy(),
                                      regularized=header.get("regularized", False))
        basis = make_basis(spec_from_dict(header["basis"]))
        n_entries = d * (d + 1) // 2
        coeffs = np.frombuffer(
            fh.read(8 * header["n"] * n_entries), dtype="<f8"
        ).reshape(header["n"], n_entries)
        return CovarianceEstimate(d, basis=basis, coeffs=coeffs.copy(),
                                  regularized=header.get("regularized", False))
