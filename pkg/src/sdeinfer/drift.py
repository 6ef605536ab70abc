"""Drift estimation by minimizing the noise-weighted quadratic loss.

For a candidate f~(x) = sum_i a_i psi_i(x) over a basis of n functions, the
discretized loss over all observed transitions is

    (1/(2TM)) sum_{l,m} [ <f~(x), Sigma^{-1}(x) f~(x)> dt
                          - 2 <f~(x), Sigma^{-1}(x) (x_{l+1} - x_l)> ]

evaluated at the left endpoint x = x_l^m.  The loss is exactly quadratic in
the coefficients, so minimization is a linear solve:

* diagonal Sigma: the d coordinates decouple into independent n x n systems
  A_k alpha_k = b_k (the fast path);
* general Sigma: one coupled symmetric system of size nd over the stacked
  per-dimension coefficient blocks [alpha_1; ...; alpha_d].

The same global 1/(2TM) factor is applied to both A and b, which leaves the
minimizer unchanged.  Sigma is supplied via a :class:`CovModel`: a known
constant matrix, known diagonal/full expression entries, or a previously
computed :class:`~sdeinfer.covariance.CovarianceEstimate`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from ._accel import NUMBA_ENABLED, njit
from .basis import BasisSet, make_basis, spec_from_dict, spec_to_dict
from .expr import ScalarExpr, product_expr, sum_exprs
from .linalg import SingularSystemError, solve_sym
from .model import SdeModel, TrajectoryBundle, transition_chunks
from .simulate import as_vector_field

__all__ = [
    "CovModel",
    "ConstantCov",
    "DiagonalCov",
    "FullCov",
    "EstimatedCov",
    "cov_from_model",
    "NormalSystem",
    "DriftEstimate",
    "EstimatorError",
    "assemble_diagonal",
    "assemble_full",
    "solve",
    "estimate_drift",
    "loss",
    "write_drift_estimate",
    "read_drift_estimate",
    "export_drift_csv",
]

_MIN_EIG = 1e-12


class EstimatorError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Covariance models

class CovModel:
    """Interface for the diffusion covariance Sigma(x) used by the loss."""

    dim: int
    is_diagonal: bool = False

    def diagonal_at(self, points: np.ndarray) -> np.ndarray:
        """(P, d) of sigma_k^2(x); only for diagonal models."""
        raise EstimatorError("covariance model is not diagonal")

    def matrix_at(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def inverse_at(self, points: np.ndarray) -> np.ndarray:
        """Symmetrized inverse per point; raises on near-singular Sigma."""
        return _invert_stack(self.matrix_at(points))

    def scaled(self, factor: float) -> "CovModel":
        """Sigma multiplied by a positive constant (used in invariance tests)."""
        raise NotImplementedError


def _invert_stack(mats: np.ndarray) -> np.ndarray:
    sym = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    w, v = np.linalg.eigh(sym)
    if np.any(w <= _MIN_EIG):
        p = int(np.argmax(np.any(w <= _MIN_EIG, axis=-1)))
        raise EstimatorError(
            f"singular covariance matrix at data point {p} "
            f"(min eigenvalue {w[p].min():.3e})"
        )
    return np.einsum("...ij,...j,...kj->...ik", v, 1.0 / w, v)


class ConstantCov(CovModel):
    """Constant SPD covariance matrix; inverse factorized once."""

    def __init__(self, matrix: np.ndarray):
        mat = np.asarray(matrix, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise EstimatorError("covariance must be a square matrix")
        if np.abs(mat - mat.T).max() > 1e-12 * max(1.0, np.abs(mat).max()):
            raise EstimatorError("covariance matrix must be symmetric")
        w, v = np.linalg.eigh(0.5 * (mat + mat.T))
        if w.min() <= 0:
            raise EstimatorError(
                f"covariance matrix must be SPD (min eigenvalue {w.min():.3e})"
            )
        self.matrix = 0.5 * (mat + mat.T)
        self.dim = mat.shape[0]
        self._inv = (v / w) @ v.T
        self.is_diagonal = bool(
            np.all(self.matrix == np.diag(np.diag(self.matrix)))
        )

    def diagonal_at(self, points):
        if not self.is_diagonal:
            raise EstimatorError("constant covariance is not diagonal")
        P = np.asarray(points).shape[0]
        return np.broadcast_to(np.diag(self.matrix), (P, self.dim))

    def matrix_at(self, points):
        P = np.asarray(points).shape[0]
        return np.broadcast_to(self.matrix, (P, self.dim, self.dim))

    def inverse_at(self, points):
        P = np.asarray(points).shape[0]
        return np.broadcast_to(self._inv, (P, self.dim, self.dim))

    @property
    def constant_inverse(self) -> np.ndarray:
        return self._inv

    def scaled(self, factor):
        return ConstantCov(self.matrix * factor)


class DiagonalCov(CovModel):
    """State-dependent diagonal Sigma given as d expressions sigma_k^2(x)."""

    is_diagonal = True

    def __init__(self, variance_exprs: list[ScalarExpr], scale: float = 1.0):
        self.exprs = tuple(variance_exprs)
        self.dim = len(variance_exprs)
        self._scale = float(scale)
        for e in self.exprs:
            if e.dim != self.dim:
                raise EstimatorError("variance expression dimension mismatch")

    def diagonal_at(self, points):
        pts = np.asarray(points, dtype=np.float64)
        out = np.empty((pts.shape[0], self.dim))
        for k, e in enumerate(self.exprs):
            out[:, k] = e.evaluate(pts)
        return out * self._scale

    def matrix_at(self, points):
        diag = self.diagonal_at(points)
        out = np.zeros((diag.shape[0], self.dim, self.dim))
        idx = np.arange(self.dim)
        out[:, idx, idx] = diag
        return out

    def scaled(self, factor):
        return DiagonalCov(list(self.exprs), scale=self._scale * factor)


class FullCov(CovModel):
    """State-dependent symmetric Sigma given as a d x d expression matrix."""

    def __init__(self, entry_exprs: list[list[ScalarExpr]], scale: float = 1.0):
        self.exprs = tuple(tuple(row) for row in entry_exprs)
        self.dim = len(entry_exprs)
        self._scale = float(scale)

    def matrix_at(self, points):
        pts = np.asarray(points, dtype=np.float64)
        out = np.empty((pts.shape[0], self.dim, self.dim))
        for k in range(self.dim):
            for j in range(k, self.dim):
                vals = self.exprs[k][j].evaluate(pts)
                out[:, k, j] = vals
                out[:, j, k] = vals
        return out * self._scale

    def scaled(self, factor):
        return FullCov([list(r) for r in self.exprs],
                       scale=self._scale * factor)


class EstimatedCov(CovModel):
    """Adapter using a CovarianceEstimate as the Sigma of the loss."""

    def __init__(self, estimate, scale: float = 1.0):
        self.estimate = estimate
        self.dim = estimate.dim
        self._scale = float(scale)
        self.is_diagonal = estimate.is_diagonal

    def diagonal_at(self, points):
        if not self.is_diagonal:
            raise EstimatorError("estimated covariance is not diagonal")
        mats = self.estimate.matrix_at(points)
        idx = np.arange(self.dim)
        return mats[:, idx, idx] * self._scale

    def matrix_at(self, points):
        return self.estimate.matrix_at(points) * self._scale

    def scaled(self, factor):
        return EstimatedCov(self.estimate, scale=self._scale * factor)


def cov_from_model(model: SdeModel) -> CovModel:
    """Known covariance Sigma = sigma sigma^T built from a model's sigma."""
    if model.sigma_is_constant:
        s = model.constant_sigma()
        return ConstantCov(s @ s.T)
    if model.sigma_is_diagonal:
        variances = [
            product_expr(model.sigma[k][k], model.sigma[k][k])
            for k in range(model.dim)
        ]
        return DiagonalCov(variances)
    entries = []
    for k in range(model.dim):
        row = []
        for j in range(model.dim):
            terms = [
                product_expr(model.sigma[k][q], model.sigma[j][q])
                for q in range(model.dim)
            ]
            row.append(sum_exprs(terms))
        entries.append(row)
    return FullCov(entries)


# ---------------------------------------------------------------------------
# Normal systems

@dataclass
class NormalSystem:
    """Assembled quadratic form: loss(alpha) = alpha' A alpha - 2 alpha' b.

    kind "diagonal": A has shape (d, n, n), b has shape (d, n) and the d
    systems are independent.  kind "full": A is the (nd, nd) coupled matrix
    over the stacked blocks [alpha_1; ...; alpha_d], b is (nd,).
    """

    kind: str
    basis: BasisSet
    dim: int
    A: np.ndarray
    b: np.ndarray


def _report_nonpositive(sig2, m0, L, context):
    rows, ks = np.nonzero(sig2 <= 0)
    r, k = int(rows[0]), int(ks[0])
    m = m0 + r // (L - 1)
    l = r % (L - 1)
    raise EstimatorError(
        f"{context}: nonpositive sigma_{k + 1}^2 at trajectory {m}, step {l}"
    )


def assemble_diagonal(bundle: TrajectoryBundle, basis: BasisSet,
                      cov: CovModel) -> NormalSystem:
    """Per-dimension normal systems for diagonal Sigma.

    A_k(i,j) = (1/(2TM)) sum_{l,m} psi_i psi_j dt_l / sigma_k^2(x_l^m)
    b_k(i)   = (1/(2TM)) sum_{l,m} psi_i (x_{l+1}^m - x_l^m)_k / sigma_k^2
    """
    if not cov.is_diagonal:
        raise EstimatorError(
            "assemble_diagonal requires a diagonal covariance model; "
            "use assemble_full for correlated noise"
        )
    d, n = bundle.dim, basis.n
    A = np.zeros((d, n, n))
    b = np.zeros((d, n))
    L = bundle.grid.length
    for x, dx, dt, m0 in transition_chunks(bundle):
        psi = basis.design_matrix(x)
        sig2 = cov.diagonal_at(x)
        if np.any(sig2 <= 0):
            _report_nonpositive(sig2, m0, L, "assemble_diagonal")
        for k in range(d):
            w = dt / sig2[:, k]
            A[k] += psi.T @ (w[:, None] * psi)
            b[k] += psi.T @ (dx[:, k] / sig2[:, k])
    scale = 1.0 / (2.0 * bundle.grid.horizon * bundle.count)
    return NormalSystem("diagonal", basis, d, A * scale, b * scale)


@njit(cache=True)
def _accumulate_full_numba(psi, sinv, dt, dx, A, b):  # pragma: no cover
    P, n = psi.shape
    d = sinv.shape[1]
    y = np.zeros(d)
    for p in range(P):
        for k in range(d):
            acc = 0.0
            for j in range(d):
                acc += sinv[p, k, j] * dx[p, j]
            y[k] = acc
        for i in range(n):
            pi = psi[p, i]
            if pi == 0.0:
                continue
            for k in range(d):
                b[k * n + i] += pi * y[k]
            for j in range(n):
                pj = psi[p, j]
                if pj == 0.0:
                    continue
                g = pi * pj * dt[p]
                for k in range(d):
                    for kk in range(d):
                        A[k * n + i, kk * n + j] += sinv[p, k, kk] * g


def _accumulate_full_numpy(psi, sinv, dt, dx, A, b):
    n = psi.shape[1]
    d = sinv.shape[1]
    y = np.einsum("pkj,pj->pk", sinv, dx)
    for k in range(d):
        b[k * n:(k + 1) * n] += psi.T @ y[:, k]
        for kk in range(k, d):
            w = sinv[:, k, kk] * dt
            blk = psi.T @ (w[:, None] * psi)
            A[k * n:(k + 1) * n, kk * n:(kk + 1) * n] += blk
            if kk != k:
                A[kk * n:(kk + 1) * n, k * n:(k + 1) * n] += blk.T


def assemble_full(bundle: TrajectoryBundle, basis: BasisSet,
                  cov: CovModel) -> NormalSystem:
    """Coupled normal system over the nd stacked coefficients.

    Exactly matches the quadratic form of the discretized loss for general
    Sigma; reduces to the diagonal assembly when Sigma is diagonal.
    """
    d, n = bundle.dim, basis.n
    A = np.zeros((n * d, n * d))
    b = np.zeros(n * d)
    constant_inv = getattr(cov, "constant_inverse", None)
    if constant_inv is not None:
        A0 = np.zeros((n, n))
        for x, dx, dt, _ in transition_chunks(bundle):
            psi = basis.design_matrix(x)
            A0 += psi.T @ (dt[:, None] * psi)
            y = dx @ constant_inv
            for k in range(d):
                b[k * n:(k + 1) * n] += psi.T @ y[:, k]
        A = np.kron(constant_inv, A0)
    else:
        for x, dx, dt, _ in transition_chunks(bundle):
            psi = basis.design_matrix(x)
            sinv = cov.inverse_at(x)
            if NUMBA_ENABLED:
                _accumulate_full_numba(psi, sinv, dt, dx, A, b)
            else:
                _accumulate_full_numpy(psi, sinv, dt, dx, A, b)
    scale = 1.0 / (2.0 * bundle.grid.horizon * bundle.count)
    return NormalSystem("full", basis, d, A * scale, b * scale)


# ---------------------------------------------------------------------------
# Solving and the estimate

class DriftEstimate:
    """f_hat(x) = sum_i a_i psi_i(x) with coefficient vectors a_i in R^d."""

    def __init__(self, basis: BasisSet, coeffs: np.ndarray,
                 regularized: bool = False):
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.ndim != 2 or coeffs.shape[0] != basis.n:
            raise EstimatorError(
                f"coefficients must have shape (n, d) = ({basis.n}, ...)"
            )
        if not np.isfinite(coeffs).all():
            raise EstimatorError("coefficients must be finite")
        self.basis = basis
        self.coeffs = coeffs
        self.regularized = regularized

    @property
    def dim(self) -> int:
        return self.coeffs.shape[1]

    def drift_at(self, points: np.ndarray) -> np.ndarray:
        return self.basis.design_matrix(points) @ self.coeffs

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.drift_at(points)


def solve(system: NormalSystem) -> DriftEstimate:
    """Symmetric solve with ridge fallback; flags regularized estimates."""
    n, d = system.basis.n, system.dim
    regularized = False
    if system.kind == "diagonal":
        coeffs = np.empty((n, d))
        for k in range(d):
            alpha, reg = solve_sym(system.A[k], system.b[k],
                                   context=f"drift system (dimension {k+1})")
            coeffs[:, k] = alpha
            regularized = regularized or reg
    else:
        alpha, regularized = solve_sym(system.A, system.b,
                                       context="coupled drift system")
        coeffs = alpha.reshape(d, n).T
    return DriftEstimate(system.basis, coeffs, regularized)


def estimate_drift(bundle: TrajectoryBundle, basis: BasisSet,
                   cov: CovModel, solver: str = "auto") -> DriftEstimate:
    """Assemble and solve in one step; solver in {auto, diagonal, full}."""
    if solver == "auto":
        solver = "diagonal" if cov.is_diagonal else "full"
    if solver == "diagonal":
        return solve(assemble_diagonal(bundle, basis, cov))
    if solver == "full":
        return solve(assemble_full(bundle, basis, cov))
    raise EstimatorError(f"unknown solver {solver!r}")


# ---------------------------------------------------------------------------
# Estimate files

_EST_MAGIC = b"SDEE"
_EST_VERSION = 1


def write_drift_estimate(path, estimate: DriftEstimate) -> None:
    """Header {d, n, basis spec (JSON)}, then n x d float64 coefficients."""
    header = json.dumps({
        "d": estimate.dim,
        "n": estimate.basis.n,
        "basis": spec_to_dict(estimate.basis.spec),
        "regularized": estimate.regularized,
    }).encode()
    with open(path, "wb") as fh:
        fh.write(_EST_MAGIC)
        fh.write(struct.pack("<2I", _EST_VERSION, len(header)))
        fh.write(header)
        fh.write(estimate.coeffs.astype("<f8").tobytes())


def read_drift_estimate(path) -> DriftEstimate:
    with open(path, "rb") as fh:
        if fh.read(4) != _EST_MAGIC:
            raise EstimatorError("not a drift estimate file")
        version, hlen = struct.unpack("<2I", fh.read(8))
        if version != _EST_VERSION:
            raise EstimatorError(f"unsupported estimate version {version}")
        header = json.loads(fh.read(hlen).decode())
        basis = make_basis(spec_from_dict(header["basis"]))
        coeffs = np.frombuffer(
            fh.read(8 * header["n"] * header["d"]), dtype="<f8"
        ).reshape(header["n"], header["d"])
    return DriftEstimate(basis, coeffs.copy(),
                         regularized=header.get("regularized", False))


def export_drift_csv(path, estimate: DriftEstimate, f_true=None,
                     points_per_dim: int = 50) -> None:
    """Sample f_hat (and optionally f) on a regular grid for plotting."""
    dom = estimate.basis.domain
    d = estimate.dim
    per_dim = points_per_dim if d == 1 else max(2, min(points_per_dim, 25))
    axes = [np.linspace(dom.lower[k], dom.upper[k], per_dim) for k in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    fh_vals = estimate.drift_at(pts)
    ft_vals = None
    if f_true is not None:
        ft_vals = np.asarray(as_vector_field(f_true)(pts))
    with open(path, "w", newline="") as out:
        cols = [f"x{k+1}" for k in range(d)]
        cols += [f"fhat{k+1}" for k in range(d)]
        if ft_vals is not None:
            cols += [f"f{k+1}" for k in range(d)]
        out.write(",".join(cols) + "\n")
        for i in range(pts.shape[0]):
            row = list(pts[i]) + list(fh_vals[i])
            if ft_vals is not None:
                row += list(ft_vals[i])
            out.write(",".join(f"{v:.12g}" for v in row) + "\n")


def loss(bundle: TrajectoryBundle, f, cov: CovModel) -> float:
    """Value of the discretized noise-weighted loss for any drift candidate.

    Pure function of its inputs; independent of the assembly code path so it
    can serve as a cross-check (loss(alpha) = alpha' A alpha - 2 alpha' b).
    """
    f_at = as_vector_field(f)
    total = 0.0
    L = bundle.grid.length
    for x, dx, dt, m0 in transition_chunks(bundle):
        fx = np.asarray(f_at(x), dtype=np.float64)
        if cov.is_diagonal:
            sig2 = cov.diagonal_at(x)
            if np.any(sig2 <= 0):
                _report_nonpositive(sig2, m0, L, "loss")
            total += float(
                np.sum((fx * fx) / sig2 * dt[:, None])
                - 2.0 * np.sum(fx * dx / sig2)
            )
        else:
            sinv = cov.inverse_at(x)
            sf = np.einsum("pkj,pj->pk", sinv, fx)
            total += float(
                np.sum(np.einsum("pk,pk->p", fx, sf) * dt)
                - 2.0 * np.sum(np.einsum("pk,pk->", sf, dx))
            )
    return total / (2.0 * bundle.grid.horizon * bundle.count)
