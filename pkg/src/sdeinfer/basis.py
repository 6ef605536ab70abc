"""Finite-dimensional hypothesis spaces: B-splines and piecewise polynomials.

1d bases are clamped B-splines on uniform knots (count = knots_per_dim +
degree) or per-cell shifted Legendre polynomials (count = knots_per_dim *
(degree + 1)).  For d >= 2 the basis is the tensor-product grid of the 1d
bases, flattened row-major over (i_1, ..., i_d) with i_1 slowest.

Evaluation clamps query points onto the domain coordinatewise, so estimated
functions stay defined on all of R^d.  The per-dimension design-matrix
evaluation is a hot kernel with numba and numpy twins (see `_accel`).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._accel import NUMBA_ENABLED, njit

__all__ = [
    "Domain",
    "BasisSpec",
    "BasisSet",
    "BasisError",
    "build_domain",
    "tensor_product",
    "make_basis",
    "eval_basis",
]

BASIS_COUNT_CAP = 10**6


class BasisError(ValueError):
    pass


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box, lower < upper componentwise."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=np.float64))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise BasisError("domain bounds must be 1d arrays of equal length")
        if not np.all(lo < hi):
            raise BasisError("domain requires lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        lo.setflags(write=False)
        hi.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.lower.size

    def clamp(self, points: np.ndarray) -> np.ndarray:
        return np.clip(points, self.lower, self.upper)

    def axis(self, k: int) -> "Domain":
        return Domain(self.lower[k : k + 1], self.upper[k : k + 1])


def build_domain(bundle, pad_fraction: float = 0.0) -> Domain:
    """Box spanning the observed states, padded by ``pad_fraction`` * range.

    A coordinate with zero observed range is expanded symmetrically by a
    total width of 1.
    """
    if pad_fraction < 0:
        raise BasisError("pad_fraction must be >= 0")
    pts = bundle.pooled_states()
    if pts.size == 0:
        raise BasisError("empty bundle")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    rng = hi - lo
    degenerate = rng == 0
    lo = np.where(degenerate, lo - 0.5, lo - pad_fraction * rng)
    hi = np.where(degenerate, hi + 0.5, hi + pad_fraction * rng)
    return Domain(lo, hi)


@dataclass(frozen=True)
class BasisSpec:
    """Declarative description of the hypothesis space.

    kind: "bspline" or "pwpoly"; degree >= 0; knots_per_dim: uniform
    subdivisions per coordinate (int, broadcast to all dims).  ``domain`` may
    be None for specs whose domain is derived from data later.
    """

    kind: str
    degree: int
    knots_per_dim: tuple[int, ...] | int
    domain: Domain | None = None

    def __post_init__(self):
        if self.kind not in ("bspline", "pwpoly"):
            raise BasisError(f"unknown basis kind {self.kind!r}")
        if self.degree < 0:
            raise BasisError("degree must be >= 0")
        knots = self.knots_per_dim
        if isinstance(knots, int):
            knots = (knots,)
        else:
            knots = tuple(int(k) for k in knots)
        if any(k < 1 for k in knots):
            raise BasisError("knots_per_dim must be >= 1")
        object.__setattr__(self, "knots_per_dim", knots)
        if self.domain is not None and len(knots) not in (1, self.domain.dim):
            raise BasisError("knots_per_dim does not match domain dimension")

    def knots_for_dim(self, d: int) -> tuple[int, ...]:
        k = self.knots_per_dim
        return k * d if len(k) == 1 else k

    def count_1d(self, cells: int) -> int:
        if self.kind == "bspline":
            return cells + self.degree
        return cells * (self.degree + 1)


# ---------------------------------------------------------------------------
# 1d evaluation kernels

def _clamped_knots(lo: float, hi: float, cells: int, degree: int) -> np.ndarray:
    interior = np.linspace(lo, hi, cells + 1)
    return np.concatenate(
        [np.full(degree, lo), interior, np.full(degree, hi)]
    )


def _bspline_design_numpy(x, knots, degree, n):
    p = degree
    spans = np.searchsorted(knots, x, side="right") - 1
    spans = np.clip(spans, p, n - 1)
    npts = x.size
    vals = np.zeros((npts, p + 1))
    vals[:, 0] = 1.0
    left = np.zeros((npts, p + 1))
    right = np.zeros((npts, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - knots[spans + 1 - j]
        right[:, j] = knots[spans + j] - x
        saved = np.zeros(npts)
        for r in range(j):
            temp = vals[:, r] / (right[:, r + 1] + left[:, j - r])
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved
    design = np.zeros((npts, n))
    cols = spans[:, None] - p + np.arange(p + 1)[None, :]
    design[np.arange(npts)[:, None], cols] = vals
    return design


@njit(cache=True)
def _bspline_point(x, knots, p, n, vals):  # pragma: no cover - numba twin
    span = n - 1
    for i in range(p, n):
        if x < knots[i + 1]:
            span = i
            break
    vals[0] = 1.0
    for j in range(1, p + 1):
        saved = 0.0
        for r in range(j):
            right = knots[span + r + 1] - x
            left = x - knots[span + 1 - (j - r)]
            temp = vals[r] / (right + left)
            vals[r] = saved + right * temp
            saved = left * temp
        vals[j] = saved
    return span


@njit(cache=True)
def _bspline_design_numba(x, knots, p, n):  # pragma: no cover - numba twin
    npts = x.size
    design = np.zeros((npts, n))
    vals = np.zeros(p + 1)
    for i in range(npts):
        span = _bspline_point(x[i], knots, p, n, vals)
        for a in range(p + 1):
            design[i, span - p + a] = vals[a]
    return design


def _legendre_recursion_columns(u, degree):
    cols = [np.ones_like(u)]
    if degree >= 1:
        cols.append(u.copy())
    for j in range(1, degree):
        nxt = ((2 * j + 1) * u * cols[j] - j * cols[j - 1]) / (j + 1)
        cols.append(nxt)
    return cols


def _pwpoly_design_numpy(x, lo, hi, cells, degree, n):
    h = (hi - lo) / cells
    cell = np.clip(((x - lo) / h).astype(np.int64), 0, cells - 1)
    u = 2.0 * (x - lo - cell * h) / h - 1.0
    npts = x.size
    design = np.zeros((npts, n))
    rows = np.arange(npts)
    for j, col in enumerate(_legendre_recursion_columns(u, degree)):
        design[rows, cell * (degree + 1) + j] = col
    return design


@njit(cache=True)
def _pwpoly_point(x, lo, hi, cells, degree, vals):  # pragma: no cover
    h = (hi - lo) / cells
    cell = int((x - lo) / h)
    if cell < 0:
        cell = 0
    if cell > cells - 1:
        cell = cells - 1
    u = 2.0 * (x - lo - cell * h) / h - 1.0
    vals[0] = 1.0
    if degree >= 1:
        vals[1] = u
    for j in range(1, degree):
        vals[j + 1] = ((2 * j + 1) * u * vals[j] - j * vals[j - 1]) / (j + 1)
    return cell


@njit(cache=True)
def _pwpoly_design_numba(x, lo, hi, cells, degree, n):  # pragma: no cover
    npts = x.size
    design = np.zeros((npts, n))
    vals = np.zeros(degree + 1)
    for i in range(npts):
        cell = _pwpoly_point(x[i], lo, hi, cells, degree, vals)
        for j in range(degree + 1):
            design[i, cell * (degree + 1) + j] = vals[j]
    return design


class Basis1D:
    """One coordinate's basis: evaluation plus the data needed by kernels."""

    def __init__(self, kind: str, degree: int, cells: int, lo: float, hi: float):
        self.kind = kind
        self.degree = int(degree)
        self.cells = int(cells)
        self.lo = float(lo)
        self.hi = float(hi)
        if kind == "bspline":
            self.n = cells + degree
            self.knots = _clamped_knots(lo, hi, cells, degree)
        else:
            self.n = cells * (degree + 1)
            self.knots = np.linspace(lo, hi, cells + 1)

    def design(self, x: np.ndarray) -> np.ndarray:
        """(npts,) -> (npts, n) design matrix; x assumed inside [lo, hi]."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        if self.kind == "bspline":
            if NUMBA_ENABLED:
                return _bspline_design_numba(x, self.knots, self.degree, self.n)
            return _bspline_design_numpy(x, self.knots, self.degree, self.n)
        if NUMBA_ENABLED:
            return _pwpoly_design_numba(
                x, self.lo, self.hi, self.cells, self.degree, self.n
            )
        return _pwpoly_design_numpy(
            x, self.lo, self.hi, self.cells, self.degree, self.n
        )


class BasisSet:
    """Evaluable tensor-product basis psi_i: R^d -> R, i = 1..n."""

    def __init__(self, spec: BasisSpec, axes: list[Basis1D]):
        if spec.domain is None:
            raise BasisError("basis set requires a concrete domain")
        self.spec = spec
        self.axes = axes
        self.domain = spec.domain
        n = 1
        for ax in axes:
            n *= ax.n
        if n > BASIS_COUNT_CAP:
            raise BasisError(
                f"basis count {n} exceeds cap {BASIS_COUNT_CAP}"
            )
        self.n = n

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(ax.n for ax in self.axes)

    def design_matrix(self, points: np.ndarray) -> np.ndarray:
        """(npts, d) -> (npts, n); points are clamped onto the domain.

        Row-major flattening: column index of (i_1, ..., i_d) is
        i_1 * n_2 * ... * n_d + ... + i_d.
        """
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None] if self.dim == 1 else pts[None, :]
        if pts.shape[1] != self.dim:
            raise BasisError(
                f"points have dimension {pts.shape[1]}, basis has {self.dim}"
            )
        pts = self.domain.clamp(pts)
        out = self.axes[0].design(pts[:, 0])
        for k in range(1, self.dim):
            nxt = self.axes[k].design(pts[:, k])
            out = (out[:, :, None] * nxt[:, None, :]).reshape(pts.shape[0], -1)
        return out

    def eval(self, x) -> np.ndarray:
        """Basis values at a single point -> (n,)."""
        pt = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return self.design_matrix(pt.reshape(1, self.dim))[0]


def make_basis(spec: BasisSpec, dim: int | None = None) -> BasisSet:
    """Realize a spec on its domain (dimension inferred from the domain)."""
    if spec.domain is None:
        raise BasisError("spec has no domain; call build_domain first")
    d = spec.domain.dim if dim is None else dim
    knots = spec.knots_for_dim(d)
    axes = [
        Basis1D(spec.kind, spec.degree, knots[k],
                spec.domain.lower[k], spec.domain.upper[k])
        for k in range(d)
    ]
    return BasisSet(spec, axes)


def tensor_product(specs_1d: list[BasisSpec]) -> BasisSet:
    """Tensor-product basis from per-dimension 1d specs."""
    if not specs_1d:
        raise BasisError("need at least one 1d spec")
    axes = []
    lows, highs = [], []
    for s in specs_1d:
        if s.domain is None or s.domain.dim != 1:
            raise BasisError("each per-dimension spec needs a 1d domain")
        cells = s.knots_for_dim(1)[0]
        axes.append(
            Basis1D(s.kind, s.degree, cells, s.domain.lower[0], s.domain.upper[0])
        )
        lows.append(s.domain.lower[0])
        highs.append(s.domain.upper[0])
    domain = Domain(np.array(lows), np.array(highs))
    spec = replace(
        specs_1d[0],
        knots_per_dim=tuple(s.knots_for_dim(1)[0] for s in specs_1d),
        domain=domain,
    )
    return BasisSet(spec, axes)


def eval_basis(basis: BasisSet, x) -> np.ndarray:
    """Basis vector at one point (clamped onto the domain)."""
    return basis.eval(x)


def spec_to_dict(spec: BasisSpec) -> dict:
    """JSON-friendly encoding used in estimate file headers."""
    if spec.domain is None:
        raise BasisError("cannot serialize a spec without a domain")
    return {
        "kind": spec.kind,
        "degree": spec.degree,
        "knots_per_dim": list(spec.knots_per_dim),
        "lower": spec.domain.lower.tolist(),
        "upper": spec.domain.upper.tolist(),
    }


def spec_from_dict(data: dict) -> BasisSpec:
    domain = Domain(np.asarray(data["lower"]), np.asarray(data["upper"]))
    return BasisSpec(data["kind"], int(data["degree"]),
                     tuple(int(k) for k in data["knots_per_dim"]), domain)
