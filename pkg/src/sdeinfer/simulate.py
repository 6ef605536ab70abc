"""Euler-Maruyama trajectory generation with reproducible noise streams.

Each trajectory m draws from its own generator seeded by (seed, m), so the
set of trajectories can be produced in any order (or in parallel) without
changing results, and dropping a trajectory never perturbs the others.

Gaussian increments use the inverse transform: u = (k + 0.5) / 2^53 with k a
53-bit uniform integer, z = ndtri(u).  This is fixed so runs are reproducible
across platforms to within floating-point determinism.

Storing the increments (``record_noise``) enables re-integrating the same
realized noise under an estimated drift (:func:`replay`).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .model import Initial, ModelError, SdeModel, TimeGrid, TrajectoryBundle, _step_count

__all__ = [
    "SimConfig",
    "SimulationError",
    "euler_maruyama",
    "replay",
    "write_trajectories",
    "read_trajectories",
    "export_csv",
]

BLOWUP_THRESHOLD = 1e12
_MAGIC = b"SDET"
_VERSION = 1


class SimulationError(RuntimeError):
    """Numerical failure during integration (blow-up, bad inputs)."""

    def __init__(self, message, trajectory=None, step=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.step = step


@dataclass(frozen=True)
class SimConfig:
    """Simulation parameters; T/dt must be an integer number of steps."""

    T: float
    dt: float
    M: int
    seed: int = 0
    record_noise: bool = False

    def __post_init__(self):
        _step_count(self.T, self.dt)  # validates T, dt
        if self.M < 1:
            raise ModelError("M must be >= 1")
        if self.seed < 0 or self.seed >= 2**64:
            raise ModelError("seed must fit in 64 bits")

    @property
    def steps(self) -> int:
        return _step_count(self.T, self.dt)


def standard_normals(rng: np.random.Generator, shape) -> np.ndarray:
    """Inverse-transform standard normals from a 53-bit uniform grid."""
    k = rng.integers(0, 1 << 53, size=shape, dtype=np.int64)
    return ndtri((k + 0.5) * (1.0 / (1 << 53)))


def draw_noise_and_initials(initial: Initial, cfg: SimConfig, dim: int):
    """Per-trajectory streams: initial state first, then all increments.

    Returns (x0 (M, dim), dW (M, steps, dim)); dW ~ N(0, dt I).
    """
    steps = cfg.steps
    x0 = np.empty((cfg.M, dim))
    draws = np.empty((cfg.M, steps, dim))
    for m in range(cfg.M):
        rng = np.random.default_rng([cfg.seed, m])
        x0[m] = initial.sample(rng, m)
        draws[m] = standard_normals(rng, (steps, dim))
    return x0, draws * np.sqrt(cfg.dt)


def as_vector_field(f):
    """Normalize drift-like inputs to a callable (npts, d) -> (npts, d)."""
    if hasattr(f, "drift_at"):
        return f.drift_at
    if callable(f):
        return f
    raise TypeError(f"cannot use {type(f).__name__} as a vector field")


def _integrate(f_at, sigma_at, sigma_const, x0, dt, noise):
    """Shared stepping loop: x <- x + f(x) dt + sigma(x) dW.

    ``sigma_const`` is the constant matrix when sigma is state independent,
    else None and ``sigma_at`` evaluates (M, d, d) per step.  Using one loop
    for simulation and replay keeps the two bit-identical given equal drift.
    """
    M, d = x0.shape
    steps = noise.shape[1]
    states = np.empty((M, steps + 1, d))
    states[:, 0] = x0
    x = x0
    for l in range(steps):
        fx = f_at(x)
        if sigma_const is not None:
            diff = noise[:, l] @ sigma_const.T
        else:
            diff = np.einsum("mij,mj->mi", sigma_at(x), noise[:, l])
        x = x + fx * dt + diff
        bad = ~np.isfinite(x) | (np.abs(x) > BLOWUP_THRESHOLD)
        if bad.any():
            m_bad = int(np.argmax(bad.any(axis=1)))
            raise SimulationError(
                f"state blow-up in trajectory {m_bad} at step {l + 1}",
                trajectory=m_bad,
                step=l + 1,
            )
        states[:, l + 1] = x
    return states


def euler_maruyama(model: SdeModel, cfg: SimConfig) -> TrajectoryBundle:
    """Simulate M trajectories of dx = f dt + sigma dW on a uniform grid.

    Deterministic: identical (model, cfg) produce bit-identical bundles.
    """
    x0, noise = draw_noise_and_initials(model.initial, cfg, model.dim)
    sigma_const = model.constant_sigma() if model.sigma_is_constant else None
    states = _integrate(
        model.drift_at, model.sigma_at, sigma_const, x0, cfg.dt, noise
    )
    grid = TimeGrid.uniform(cfg.T, cfg.dt)
    return TrajectoryBundle(
        grid, states, noise if cfg.record_noise else None
    )


def replay(model: SdeModel, bundle: TrajectoryBundle, f_hat) -> TrajectoryBundle:
    """Re-integrate each trajectory from its x_0 under ``f_hat`` with the
    recorded Brownian increments (same grid, same diffusion coefficient)."""
    if bundle.noise is None:
        raise SimulationError(
            "bundle has no recorded noise; re-simulate with record_noise=True"
        )
    if model.dim != bundle.dim:
        raise ModelError(
            f"model dimension {model.dim} != bundle dimension {bundle.dim}"
        )
    f_at = as_vector_field(f_hat)
    probe = f_at(bundle.states[:1, 0, :])
    if np.asarray(probe).shape != (1, model.dim):
        raise ModelError("f_hat dimension does not match the bundle")
    sigma_const = model.constant_sigma() if model.sigma_is_constant else None
    dt = float(bundle.grid.steps[0])
    if not np.allclose(bundle.grid.steps, dt, rtol=0, atol=1e-12):
        raise ModelError("replay requires a uniform time grid")
    states = _integrate(
        f_at, model.sigma_at, sigma_const,
        bundle.states[:, 0, :].copy(), dt, bundle.noise,
    )
    return TrajectoryBundle(bundle.grid, states, bundle.noise)


# ---------------------------------------------------------------------------
# Trajectory files

def write_trajectories(path, bundle: TrajectoryBundle) -> None:
    """Binary format: header {magic 'SDET', version, d, L, M, flags}, then
    L float64 timestamps, M*L*d float64 states (m, l, coord), then noise."""
    flags = 1 if bundle.noise is not None else 0
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<5I", _VERSION, bundle.dim,
                             bundle.grid.length, bundle.count, flags))
        fh.write(bundle.grid.times.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(bundle.states).astype("<f8").tobytes())
        if bundle.noise is not None:
            fh.write(np.ascontiguousarray(bundle.noise).astype("<f8").tobytes())


def read_trajectories(path) -> TrajectoryBundle:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ModelError(f"not a trajectory file (magic {magic!r})")
        version, d, L, M, flags = struct.unpack("<5I", fh.read(20))
        if version != _VERSION:
            raise ModelError(f"unsupported trajectory file version {version}")
        times = np.frombuffer(fh.read(8 * L), dtype="<f8")
        states = np.frombuffer(fh.read(8 * M * L * d), dtype="<f8")
        states = states.reshape(M, L, d)
        noise = None
        if flags & 1:
            noise = np.frombuffer(fh.read(8 * M * (L - 1) * d), dtype="<f8")
            noise = noise.reshape(M, L - 1, d)
    return TrajectoryBundle(TimeGrid(times.copy()), states.copy(),
                            None if noise is None else noise.copy())


def export_csv(path, bundle: TrajectoryBundle) -> None:
    """Columns m, t, x1..xd; one row per (trajectory, instant)."""
    d = bundle.dim
    with open(path, "w", newline="") as fh:
        fh.write("m,t," + ",".join(f"x{k+1}" for k in range(d)) + "\n")
        buf = io.StringIO()
        for m in range(bundle.count):
            for l in range(bundle.grid.length):
                row = bundle.states[m, l]
                buf.write(f"{m},{bundle.grid.times[l]:.12g},")
                buf.write(",".join(f"{v:.17g}" for v in row))
                buf.write("\n")
        fh.write(buf.getvalue())
