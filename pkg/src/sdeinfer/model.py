"""Core domain types: time grids, trajectory bundles and SDE models.

The system being learned is dx = f(x) dt + sigma(x) dw with f: R^d -> R^d and
a symmetric diffusion coefficient sigma: R^d -> R^{d x d}.  All types here are
immutable after construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import ExprDomainError, ExprError, ScalarExpr, parse_expr

__all__ = [
    "TimeGrid",
    "TrajectoryBundle",
    "Initial",
    "SdeModel",
    "ModelError",
    "eval_drift",
]


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing instants t_1 < ... < t_L with t_1 = 0."""

    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        object.__setattr__(self, "times", times)
        if times.ndim != 1 or times.size < 2:
            raise ModelError("time grid needs at least two instants")
        if times[0] != 0.0:
            raise ModelError("time grid must start at t = 0")
        if not np.all(np.diff(times) > 0):
            raise ModelError("time grid must be strictly increasing")
        times.setflags(write=False)

    @classmethod
    def uniform(cls, horizon: float, dt: float) -> "TimeGrid":
        steps = _step_count(horizon, dt)
        return cls(np.linspace(0.0, horizon, steps + 1))

    @property
    def length(self) -> int:
        return self.times.size

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def steps(self) -> np.ndarray:
        """The L-1 interval lengths t_{l+1} - t_l."""
        return np.diff(self.times)


def _step_count(horizon: float, dt: float) -> int:
    """Number of steps L-1; horizon/dt must be an integer to ~0.5 ulp."""
    if dt <= 0 or horizon <= 0:
        raise ModelError("horizon and dt must be positive")
    ratio = horizon / dt
    steps = int(round(ratio))
    if steps < 1 or abs(ratio - steps) > 4 * np.finfo(float).eps * max(ratio, 1.0):
        raise ModelError(f"dt={dt} does not divide horizon T={horizon}")
    return steps


@dataclass(frozen=True)
class TrajectoryBundle:
    """M trajectories sampled on a shared grid, optionally with their noise.

    ``states`` has shape (M, L, d); ``noise``, when present, holds the
    Brownian increments actually used by the integrator, shape (M, L-1, d).
    """

    grid: TimeGrid
    states: np.ndarray
    noise: np.ndarray | None = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.float64)
        object.__setattr__(self, "states", states)
        if states.ndim != 3:
            raise ModelError("states must have shape (M, L, d)")
        if states.shape[1] != self.grid.length:
            raise ModelError("states length does not match the time grid")
        if not np.isfinite(states).all():
            raise ModelError("states contain non-finite values")
        states.setflags(write=False)
        if self.noise is not None:
            noise = np.asarray(self.noise, dtype=np.float64)
            object.__setattr__(self, "noise", noise)
            expected = (states.shape[0], states.shape[1] - 1, states.shape[2])
            if noise.shape != expected:
                raise ModelError(
                    f"noise shape {noise.shape} != expected {expected}"
                )
            if not np.isfinite(noise).all():
                raise ModelError("noise contains non-finite values")
            noise.setflags(write=False)

    @property
    def count(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def pooled_states(self) -> np.ndarray:
        """All observed states as one (M*L, d) array (the empirical measure)."""
        return self.states.reshape(-1, self.dim)

    def transition_arrays(self):
        """Left states, increments and step sizes for the discretized loss.

        Returns ``(x, dx, dt)`` with shapes (M*(L-1), d), (M*(L-1), d) and
        (M*(L-1),); row order is by trajectory, then by step.
        """
        x = self.states[:, :-1, :].reshape(-1, self.dim)
        dx = np.diff(self.states, axis=1).reshape(-1, self.dim)
        dt = np.broadcast_to(
            self.grid.steps, (self.count, self.grid.length - 1)
        ).reshape(-1)
        return x, dx, dt

    def snapshot_index(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.grid.times - t)))
        if abs(self.grid.times[idx] - t) > 1e-9 * max(1.0, abs(t)):
            raise ModelError(f"time {t} is not on the grid")
        return idx


def transition_chunks(bundle: "TrajectoryBundle", chunk_rows: int = 200_000):
    """Yield (x, dx, dt, m0) over blocks of whole trajectories.

    Estimator assemblies reduce over all M*(L-1) transitions; chunking over
    trajectory blocks bounds memory while keeping the reduction order fixed
    (by trajectory, then step), so results are bit-stable.
    """
    states = bundle.states
    L = bundle.grid.length
    steps = bundle.grid.steps
    rows_per_traj = L - 1
    mblock = max(1, chunk_rows // rows_per_traj)
    for m0 in range(0, bundle.count, mblock):
        m1 = min(m0 + mblock, bundle.count)
        block = states[m0:m1]
        x = block[:, :-1, :].reshape(-1, bundle.dim)
        dx = np.diff(block, axis=1).reshape(-1, bundle.dim)
        dt = np.broadcast_to(steps, (m1 - m0, rows_per_traj)).reshape(-1)
        yield x, dx, dt, m0


@dataclass(frozen=True)
class Initial:
    """Initial condition: per-coordinate uniform box or a fixed point list.

    With ``points``, trajectory m starts at ``points[m % len(points)]``.
    """

    kind: str  # "uniform" | "points"
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    points: np.ndarray | None = None

    @classmethod
    def uniform(cls, lower, upper) -> "Initial":
        lo = np.atleast_1d(np.asarray(lower, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(upper, dtype=np.float64))
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ModelError("bad uniform initial bounds")
        return cls("uniform", lower=lo, upper=hi)

    @classmethod
    def point(cls, *points) -> "Initial":
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if not np.isfinite(pts).all():
            raise ModelError("initial points must be finite")
        return cls("points", points=pts)

    def dim(self) -> int:
        if self.kind == "uniform":
            return self.lower.size
        return self.points.shape[1]

    def sample(self, rng: np.random.Generator, index: int) -> np.ndarray:
        """Initial state for trajectory ``index`` using its private stream."""
        if self.kind == "uniform":
            u = rng.random(self.lower.size)
            return self.lower + u * (self.upper - self.lower)
        return self.points[index % self.points.shape[0]].copy()


class SdeModel:
    """dx = f(x) dt + sigma(x) dw with expression-valued f and sigma.

    ``drift`` is a list of d expressions; ``sigma`` a d x d nested list of
    expressions that must evaluate to a symmetric matrix (checked on sample
    states at construction, tolerance 1e-12).
    """

    _SYMMETRY_TOL = 1e-12

    def __init__(self, dim: int, drift: list[ScalarExpr],
                 sigma: list[list[ScalarExpr]], initial: Initial):
        if len(drift) != dim:
            raise ModelError(f"need {dim} drift components, got {len(drift)}")
        if len(sigma) != dim or any(len(row) != dim for row in sigma):
            raise ModelError("sigma must be a d x d expression matrix")
        if initial.dim() != dim:
            raise ModelError("initial condition dimension mismatch")
        for e in list(drift) + [e for row in sigma for e in row]:
            if e.dim != dim:
                raise ModelError("expression dimension mismatch")
        self.dim = dim
        self.drift = tuple(drift)
        self.sigma = tuple(tuple(row) for row in sigma)
        self.initial = initial
        self._sigma_constant = all(
            e.is_constant for row in sigma for e in row
        )
        self._const_sigma = None
        if self._sigma_constant:
            mat = np.array(
                [[e.constant_value() for e in row] for row in sigma]
            )
            self._const_sigma = mat
        self._check_sigma_symmetry()

    @classmethod
    def from_strings(cls, dim: int, drift: list[str], sigma: list[list[str]],
                     initial: Initial) -> "SdeModel":
        f = [parse_expr(s, dim) for s in drift]
        s = [[parse_expr(entry, dim) for entry in row] for row in sigma]
        return cls(dim, f, s, initial)

    def _check_sigma_symmetry(self):
        if self.dim == 1:
            return
        if self._sigma_constant:
            mat = self._const_sigma
            if np.abs(mat - mat.T).max() > self._SYMMETRY_TOL:
                raise ModelError("sigma matrix is not symmetric")
            return
        rng = np.random.default_rng(0x5DE5)
        pts = rng.random((32, self.dim)) * 10.0
        checked = 0
        for k in range(self.dim):
            for j in range(k + 1, self.dim):
                try:
                    a = self.sigma[k][j].evaluate(pts)
                    b = self.sigma[j][k].evaluate(pts)
                except ExprDomainError:
                    continue
                checked += 1
                if np.abs(a - b).max() > self._SYMMETRY_TOL:
                    raise ModelError(
                        f"sigma[{k+1}][{j+1}] != sigma[{j+1}][{k+1}] at "
                        "sampled states"
                    )

    # -- evaluation ----------------------------------------------------------

    def drift_at(self, points: np.ndarray) -> np.ndarray:
        """Componentwise drift at an (npts, d) array -> (npts, d)."""
        pts = np.asarray(points, dtype=np.float64)
        out = np.empty_like(pts)
        for k, e in enumerate(self.drift):
            try:
                out[:, k] = e.evaluate(pts)
            except ExprDomainError as err:
                raise ExprDomainError(
                    f"drift component {k + 1}: {err}"
                ) from err
        return out

    def sigma_at(self, points: np.ndarray) -> np.ndarray:
        """sigma evaluated per point -> (npts, d, d)."""
        pts = np.asarray(points, dtype=np.float64)
        if self._sigma_constant:
            return np.broadcast_to(
                self._const_sigma, (pts.shape[0], self.dim, self.dim)
            )
        out = np.empty((pts.shape[0], self.dim, self.dim))
        for k in range(self.dim):
            for j in range(self.dim):
                try:
                    out[:, k, j] = self.sigma[k][j].evaluate(pts)
                except ExprDomainError as err:
                    raise ExprDomainError(
                        f"sigma[{k + 1}][{j + 1}]: {err}"
                    ) from err
        return out

    @property
    def sigma_is_constant(self) -> bool:
        return self._sigma_constant

    def constant_sigma(self) -> np.ndarray:
        if not self._sigma_constant:
            raise ModelError("sigma is state dependent")
        return self._const_sigma.copy()

    @property
    def sigma_is_diagonal(self) -> bool:
        """True when every off-diagonal sigma entry is identically zero."""
        for k in range(self.dim):
            for j in range(self.dim):
                if k == j:
                    continue
                e = self.sigma[k][j]
                if not (e.is_constant and e.constant_value() == 0.0):
                    return False
        return True


def eval_drift(model: SdeModel, x) -> np.ndarray:
    """Drift at a single state vector; errors carry the component index."""
    pt = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if pt.shape != (model.dim,):
        raise ModelError(f"state must have length {model.dim}")
    return model.drift_at(pt.reshape(1, -1))[0]
