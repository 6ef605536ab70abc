"""Performance measures: L2(rho) error, trajectory error, Wasserstein-2.

* ``l2_rho_error`` weights the function error by the empirical occupation
  measure of the data (all observed states, equal weight 1/(ML)).
* ``trajectory_error`` compares trajectories integrated under the true and
  the estimated drift with the same realized noise, per-trajectory relative,
  reported as mean +/- std over trajectories.
* ``wasserstein2`` compares empirical snapshot distributions: the exact
  sorted formula in 1d, the exact equal-weight assignment problem for d >= 2
  (snapshots larger than ``cap`` points are subsampled with a fixed seed).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import TrajectoryBundle
from .simulate import as_vector_field

__all__ = [
    "EmpiricalRho",
    "Snapshot",
    "L2Result",
    "TrajectoryErrorResult",
    "MetricsError",
    "l2_rho_error",
    "trajectory_error",
    "wasserstein2",
    "snapshot",
]

# fixed subsampling seed, independent of any simulation seed
W2_SUBSAMPLE_SEED = 24601
W2_DEFAULT_CAP = 1000


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class EmpiricalRho:
    """All observed states pooled with equal weight."""

    points: np.ndarray

    @classmethod
    def from_bundle(cls, bundle: TrajectoryBundle) -> "EmpiricalRho":
        return cls(bundle.pooled_states())


@dataclass(frozen=True)
class Snapshot:
    """The M states of a bundle at one instant."""

    time: float
    points: np.ndarray


def snapshot(bundle: TrajectoryBundle, t: float) -> Snapshot:
    idx = bundle.snapshot_index(t)
    return Snapshot(float(bundle.grid.times[idx]), bundle.states[:, idx, :])


class L2Result(NamedTuple):
    absolute: float
    relative: float  # nan when the reference function is zero on the sample


class TrajectoryErrorResult(NamedTuple):
    mean: float
    std: float


def l2_rho_error(f_true, f_hat, rho: EmpiricalRho) -> L2Result:
    """sqrt(mean ||f - f_hat||^2) and its ratio to sqrt(mean ||f||^2)."""
    ft = as_vector_field(f_true)
    fh = as_vector_field(f_hat)
    pts = rho.points
    a = np.asarray(ft(pts), dtype=np.float64)
    b = np.asarray(fh(pts), dtype=np.float64)
    absolute = float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))
    denom = float(np.sqrt(np.mean(np.sum(a**2, axis=1))))
    relative = absolute / denom if denom > 0 else float("nan")
    return L2Result(absolute, relative)


def trajectory_error(original: TrajectoryBundle,
                     replayed: TrajectoryBundle) -> TrajectoryErrorResult:
    """Per-trajectory relative squared error, time-integrated; mean +/- std.

    e_m = sum_l ||x_l - xh_l||^2 dt_l / sum_l ||x_l||^2 dt_l  (left-point sums)
    """
    if original.states.shape != replayed.states.shape:
        raise MetricsError("bundles have different shapes")
    if not np.array_equal(original.grid.times, replayed.grid.times):
        raise MetricsError("bundles are on different time grids")
    dt = original.grid.steps
    diff = original.states[:, :-1, :] - replayed.states[:, :-1, :]
    num = np.einsum("mld,l->m", diff**2, dt)
    den = np.einsum("mld,l->m", original.states[:, :-1, :] ** 2, dt)
    if np.any(den == 0):
        m = int(np.argmax(den == 0))
        raise MetricsError(f"trajectory {m} has zero norm")
    e = num / den
    return TrajectoryErrorResult(float(e.mean()), float(e.std()))


def _w2_sorted_1d(x: np.ndarray, y: np.ndarray) -> float:
    a = np.sort(x.ravel())
    b = np.sort(y.ravel())
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _w2_assignment(X: np.ndarray, Y: np.ndarray) -> float:
    cost = np.sum((X[:, None, :] - Y[None, :, :]) ** 2, axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].sum() / X.shape[0]))


def _subsample(pts: np.ndarray, size: int, rng: np.random.Generator):
    idx = rng.choice(pts.shape[0], size=size, replace=False)
    return pts[np.sort(idx)]


def wasserstein2(a: Snapshot, b: Snapshot, cap: int = W2_DEFAULT_CAP) -> float:
    """Exact W2 between two empirical snapshots.

    Unequal sizes: the larger sample is subsampled to the smaller; samples
    above ``cap`` are subsampled to ``cap``.  Subsampling uses the fixed
    documented seed ``W2_SUBSAMPLE_SEED``.
    """
    X = np.atleast_2d(np.asarray(a.points, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(b.points, dtype=np.float64))
    if X.size == 0 or Y.size == 0:
        raise MetricsError("empty snapshot")
    if X.shape[1] != Y.shape[1]:
        raise MetricsError("snapshots have different dimensions")
    target = min(X.shape[0], Y.shape[0], cap)
    rng = np.random.default_rng(W2_SUBSAMPLE_SEED)
    if X.shape[0] == Y.shape[0]:
        # equal sizes (e.g. paired original/replayed bundles): one shared
        # index draw keeps the samples coupled instead of adding MC noise
        if X.shape[0] > target:
            idx = np.sort(rng.choice(X.shape[0], size=target, replace=False))
            X, Y = X[idx], Y[idx]
    else:
        if X.shape[0] > target:
            X = _subsample(X, target, rng)
        if Y.shape[0] > target:
            Y = _subsample(Y, target, rng)
    if X.shape[1] == 1:
        return _w2_sorted_1d(X, Y)
    return _w2_assignment(X, Y)
