"""Interacting-agent systems: simulation and interaction-kernel learning.

N agents with states x_i in R^{d'} evolve by

    dx_i = (1/N) sum_{j != i} phi(||x_j - x_i||) (x_j - x_i) dt + sigma dw_i

with a scalar kernel phi of the pairwise distance and constant per-agent
noise.  Stacked into one d = N d' system the drift is linear in phi, so
learning phi on a 1d basis over distances reduces to a small symmetric
solve, using the agent-averaged inner product <u, v>_N = (1/N) sum_i <u_i, v_i>
in the noise-weighted loss and the block-diagonal stacked covariance.

The pairwise feature accumulation is a hot kernel with numba and numpy twins.

Agent blocks are laid out contiguously in the stacked state: coordinate q of
agent i sits at index i*d' + q.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import NUMBA_ENABLED, njit
from .basis import (
    Basis1D,
    BasisSet,
    BasisSpec,
    Domain,
    _bspline_point,
    _pwpoly_point,
    make_basis,
)
from .expr import ScalarExpr
from .linalg import solve_sym
from .model import Initial, ModelError, TimeGrid, TrajectoryBundle
from .simulate import SimConfig, SimulationError, _integrate, draw_noise_and_initials

__all__ = [
    "AgentSystem",
    "KernelEstimate",
    "simulate_agents",
    "replay_agents",
    "learn_kernel",
    "kernel_loss",
    "pairwise_distance_range",
]

CHUNK_POINTS = 2048


@dataclass(frozen=True)
class AgentSystem:
    """N agents in R^{agent_dim} with kernel phi and constant SPD noise."""

    count: int
    agent_dim: int
    phi: ScalarExpr
    sigma: np.ndarray
    initial: Initial

    def __post_init__(self):
        if self.count < 2:
            raise ModelError("need at least two agents")
        sig = np.asarray(self.sigma, dtype=np.float64)
        object.__setattr__(self, "sigma", sig)
        if sig.shape != (self.agent_dim, self.agent_dim):
            raise ModelError("sigma must be agent_dim x agent_dim")
        if np.abs(sig - sig.T).max() > 1e-12:
            raise ModelError("sigma must be symmetric")
        if np.linalg.eigvalsh(sig).min() <= 0:
            raise ModelError("sigma must be positive definite")
        if self.phi.dim != 1:
            raise ModelError("phi must be a 1d expression in the distance")
        if self.initial.dim() != self.agent_dim:
            raise ModelError("initial condition must be per-agent")

    @property
    def dim(self) -> int:
        return self.count * self.agent_dim

    def stacked_initial(self) -> Initial:
        if self.initial.kind == "uniform":
            return Initial.uniform(
                np.tile(self.initial.lower, self.count),
                np.tile(self.initial.upper, self.count),
            )
        return Initial.point(
            *[np.tile(p, self.count) for p in self.initial.points]
        )

    def stacked_sigma(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        for i in range(self.count):
            s = slice(i * self.agent_dim, (i + 1) * self.agent_dim)
            out[s, s] = self.sigma
        return out


def _kernel_drift(phi_values, states, N, dp):
    """Stacked drift from a callable phi evaluated on pairwise distances.

    ``states`` is (P, N*dp); phi_values maps a distance array to kernel
    values.  Diagonal pairs are masked out (phi may be undefined at r = 0).
    """
    P = states.shape[0]
    X = states.reshape(P, N, dp)
    diffs = X[:, None, :, :] - X[:, :, None, :]  # diffs[p, i, j] = x_j - x_i
    r = np.sqrt(np.sum(diffs**2, axis=3))
    safe = r.copy()
    idx = np.arange(N)
    safe[:, idx, idx] = 1.0
    w = np.asarray(phi_values(safe.reshape(-1)), dtype=np.float64)
    w = w.reshape(P, N, N)
    w[:, idx, idx] = 0.0
    drift = np.einsum("pij,pijq->piq", w, diffs) / N
    return drift.reshape(P, N * dp)


def _phi_callable(phi_like):
    if isinstance(phi_like, ScalarExpr):
        return lambda r: phi_like.evaluate(np.asarray(r, dtype=np.float64)[:, None])
    if isinstance(phi_like, KernelEstimate):
        return phi_like
    if callable(phi_like):
        return phi_like
    raise TypeError(f"cannot use {type(phi_like).__name__} as a kernel")


def simulate_agents(system: AgentSystem, cfg: SimConfig) -> TrajectoryBundle:
    """Euler-Maruyama on the stacked N*d' system with per-agent noise."""
    phi_at = _phi_callable(system.phi)
    N, dp = system.count, system.agent_dim

    def drift_at(states):
        return _kernel_drift(phi_at, states, N, dp)

    x0, noise = draw_noise_and_initials(system.stacked_initial(), cfg, system.dim)
    states = _integrate(drift_at, None, system.stacked_sigma(), x0, cfg.dt, noise)
    grid = TimeGrid.uniform(cfg.T, cfg.dt)
    return TrajectoryBundle(grid, states, noise if cfg.record_noise else None)


def replay_agents(system: AgentSystem, bundle: TrajectoryBundle,
                  phi_hat) -> TrajectoryBundle:
    """Re-integrate the recorded noise under an estimated kernel."""
    if bundle.noise is None:
        raise SimulationError(
            "bundle has no recorded noise; re-simulate with record_noise=True"
        )
    if bundle.dim != system.dim:
        raise ModelError("bundle dimension does not match the agent system")
    phi_at = _phi_callable(phi_hat)
    N, dp = system.count, system.agent_dim

    def drift_at(states):
        return _kernel_drift(phi_at, states, N, dp)

    dt = float(bundle.grid.steps[0])
    states = _integrate(drift_at, None, system.stacked_sigma(),
                        bundle.states[:, 0, :].copy(), dt, bundle.noise)
    return TrajectoryBundle(bundle.grid, states, bundle.noise)


def pairwise_distance_range(bundle: TrajectoryBundle, N: int, dp: int):
    """(min, max) over all off-diagonal pairwise distances in the data."""
    lo, hi = np.inf, -np.inf
    iu = np.triu_indices(N, k=1)
    for m0 in range(0, bundle.count, 64):
        X = bundle.states[m0:m0 + 64].reshape(-1, N, dp)
        diffs = X[:, iu[0], :] - X[:, iu[1], :]
        r = np.sqrt(np.sum(diffs**2, axis=2))
        lo = min(lo, float(r.min()))
        hi = max(hi, float(r.max()))
    return lo, hi


class KernelEstimate:
    """phi_hat(r) = sum_b c_b psi_b(r) on the observed distance range."""

    def __init__(self, basis: BasisSet, coeffs: np.ndarray,
                 count: int, agent_dim: int, regularized: bool = False):
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape != (basis.n,):
            raise ModelError("kernel coefficients must have shape (n,)")
        if not np.isfinite(coeffs).all():
            raise ModelError("kernel coefficients must be finite")
        self.basis = basis
        self.coeffs = coeffs
        self.count = count
        self.agent_dim = agent_dim
        self.regularized = regularized

    def __call__(self, r) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=np.float64))
        return self.basis.design_matrix(r[:, None]) @ self.coeffs

    def induced_drift(self, states: np.ndarray) -> np.ndarray:
        """Stacked drift f_phi_hat on (P, N*d') states."""
        return _kernel_drift(self, states, self.count, self.agent_dim)

    drift_at = induced_drift


# ---------------------------------------------------------------------------
# Assembly kernels

def _accumulate_kernel_numpy(X, dX, dt, basis1d: Basis1D, lo, hi, sinv, A, rhs):
    P, N, dp = X.shape
    nb = basis1d.n
    diffs = X[:, None, :, :] - X[:, :, None, :]
    r = np.sqrt(np.sum(diffs**2, axis=3))
    idx = np.arange(N)
    r[:, idx, idx] = lo  # dummy; masked below
    psi = basis1d.design(np.clip(r, lo, hi).reshape(-1))
    psi = psi.reshape(P, N, N, nb)
    psi[:, idx, idx, :] = 0.0
    F = np.einsum("pijb,pijq->pibq", psi, diffs) / N
    G = np.einsum("pibq,qr->pibr", F, sinv)
    A += np.einsum("pibq,picq,p->bc", G, F, dt)
    rhs += np.einsum("pibq,piq->b", G, dX)


@njit(cache=True)
def _accumulate_kernel_numba(X, dX, dt, knots, degree, kind_bspline,
                             lo, hi, cells, nb, sinv, A, rhs):  # pragma: no cover
    P, N, dp = X.shape
    vals = np.zeros(degree + 1)
    F = np.zeros((nb, dp))
    H = np.zeros((nb, dp))
    for p in range(P):
        for i in range(N):
            for b in range(nb):
                for q in range(dp):
                    F[b, q] = 0.0
            for j in range(N):
                if j == i:
                    continue
                rr = 0.0
                for q in range(dp):
                    dq = X[p, j, q] - X[p, i, q]
                    rr += dq * dq
                rr = np.sqrt(rr)
                if rr < lo:
                    rr = lo
                elif rr > hi:
                    rr = hi
                if kind_bspline:
                    span = _bspline_point(rr, knots, degree, nb, vals)
                    first = span - degree
                else:
                    cell = _pwpoly_point(rr, lo, hi, cells, degree, vals)
                    first = cell * (degree + 1)
                for a in range(degree + 1):
                    w = vals[a]
                    if w == 0.0:
                        continue
                    for q in range(dp):
                        F[first + a, q] += w * (X[p, j, q] - X[p, i, q])
            for b in range(nb):
                for q in range(dp):
                    F[b, q] /= N
            for b in range(nb):
                for q in range(dp):
                    acc = 0.0
                    for qq in range(dp):
                        acc += sinv[q, qq] * F[b, qq]
                    H[b, q] = acc
            for b in range(nb):
                hb = 0.0
                for q in range(dp):
                    hb += H[b, q] * dX[p, i, q]
                rhs[b] += hb
                for c in range(nb):
                    acc = 0.0
                    for q in range(dp):
                        acc += H[b, q] * F[c, q]
                    A[b, c] += acc * dt[p]


def learn_kernel(bundle: TrajectoryBundle, count: int, agent_dim: int,
                 basis_spec: BasisSpec, sigma_agent: np.ndarray) -> KernelEstimate:
    """Fit the interaction kernel on a 1d basis over pairwise distances.

    The coefficients minimize the noise-weighted loss of the induced stacked
    drift under the <.,.>_N inner product with block-diagonal covariance
    sigma sigma^T per agent.  If the spec has no domain it is set to the
    [min, max] of the observed pairwise distances.
    """
    N, dp = count, agent_dim
    if bundle.dim != N * dp:
        raise ModelError(
            f"bundle dimension {bundle.dim} != count*agent_dim {N * dp}"
        )
    sigma_agent = np.asarray(sigma_agent, dtype=np.float64)
    sig_cov = sigma_agent @ sigma_agent.T
    sinv = np.linalg.inv(sig_cov)
    sinv = 0.5 * (sinv + sinv.T)

    if basis_spec.domain is None:
        lo, hi = pairwise_distance_range(bundle, N, dp)
        if hi <= lo:
            hi = lo + 1.0
        basis_spec = BasisSpec(basis_spec.kind, basis_spec.degree,
                               basis_spec.knots_per_dim,
                               Domain(np.array([lo]), np.array([hi])))
    basis = make_basis(basis_spec)
    ax = basis.axes[0]
    nb = basis.n

    A = np.zeros((nb, nb))
    rhs = np.zeros(nb)
    L = bundle.grid.length
    steps = bundle.grid.steps
    rows_per_traj = L - 1
    mblock = max(1, CHUNK_POINTS // rows_per_traj)
    for m0 in range(0, bundle.count, mblock):
        m1 = min(m0 + mblock, bundle.count)
        block = bundle.states[m0:m1]
        X = block[:, :-1, :].reshape(-1, N, dp)
        dXa = np.diff(block, axis=1).reshape(-1, N, dp)
        dt = np.broadcast_to(steps, (m1 - m0, rows_per_traj)).reshape(-1)
        if NUMBA_ENABLED:
            _accumulate_kernel_numba(
                np.ascontiguousarray(X), np.ascontiguousarray(dXa),
                np.ascontiguousarray(dt), ax.knots, ax.degree,
                ax.kind == "bspline", ax.lo, ax.hi, ax.cells, nb, sinv,
                A, rhs,
            )
        else:
            _accumulate_kernel_numpy(X, dXa, dt, ax, ax.lo, ax.hi, sinv, A, rhs)
    scale = 1.0 / (2.0 * bundle.grid.horizon * bundle.count * N)
    A *= scale
    rhs *= scale
    coeffs, regularized = solve_sym(A, rhs, context="kernel system")
    return KernelEstimate(basis, coeffs, N, dp, regularized)


def kernel_loss(bundle: TrajectoryBundle, count: int, agent_dim: int,
                phi_like, sigma_agent: np.ndarray) -> float:
    """Noise-weighted <.,.>_N loss of a candidate kernel on the data.

    Independent of the assembled normal system; used for verification.
    """
    N, dp = count, agent_dim
    phi_at = _phi_callable(phi_like)
    sigma_agent = np.asarray(sigma_agent, dtype=np.float64)
    sinv = np.linalg.inv(sigma_agent @ sigma_agent.T)
    sinv = 0.5 * (sinv + sinv.T)
    total = 0.0
    L = bundle.grid.length
    steps = bundle.grid.steps
    rows_per_traj = L - 1
    mblock = max(1, CHUNK_POINTS // rows_per_traj)
    for m0 in range(0, bundle.count, mblock):
        m1 = min(m0 + mblock, bundle.count)
        block = bundle.states[m0:m1]
        X = block[:, :-1, :].reshape(-1, N * dp)
        dXa = np.diff(block, axis=1).reshape(-1, N, dp)
        dt = np.broadcast_to(steps, (m1 - m0, rows_per_traj)).reshape(-1)
        f = _kernel_drift(phi_at, X, N, dp).reshape(-1, N, dp)
        sf = np.einsum("piq,qr->pir", f, sinv)
        quad = np.einsum("piq,piq->p", sf, f)
        cross = np.einsum("piq,piq->", sf, dXa)
        total += float(np.sum(quad * dt) - 2.0 * cross)
    return total / (2.0 * bundle.grid.horizon * bundle.count * N)
