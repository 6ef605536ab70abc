#!/usr/bin/env python3
"""Time the numba and pure-numpy twins of every hot kernel.

Run with numba available (the default install); the script calls both
implementations directly, so the SDEINFER_DISABLE_NUMBA flag is not needed
here.  Typical output on a laptop shows the numba kernels winning by 2-20x
on the per-point loops and roughly tying on the BLAS-dominated paths.
"""

import time

import numpy as np

from sdeinfer._accel import NUMBA_ENABLED
from sdeinfer.basis import (
    Basis1D,
    _bspline_design_numba,
    _bspline_design_numpy,
    _pwpoly_design_numba,
    _pwpoly_design_numpy,
)
from sdeinfer.drift import _accumulate_full_numba, _accumulate_full_numpy
from sdeinfer.interacting import (
    _accumulate_kernel_numba,
    _accumulate_kernel_numpy,
)


def timeit(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_bspline(npts=2_000_000):
    ax = Basis1D("bspline", 2, 8, 0.0, 10.0)
    x = np.random.default_rng(0).random(npts) * 10.0
    _bspline_design_numba(x[:100], ax.knots, ax.degree, ax.n)  # compile
    t_nb = timeit(lambda: _bspline_design_numba(x, ax.knots, ax.degree, ax.n))
    t_np = timeit(lambda: _bspline_design_numpy(x, ax.knots, ax.degree, ax.n))
    a = _bspline_design_numba(x[:1000], ax.knots, ax.degree, ax.n)
    b = _bspline_design_numpy(x[:1000], ax.knots, ax.degree, ax.n)
    assert np.abs(a - b).max() < 1e-14
    return "bspline design (2M pts, n=10)", t_nb, t_np


def bench_pwpoly(npts=2_000_000):
    ax = Basis1D("pwpoly", 2, 8, 0.0, 10.0)
    x = np.random.default_rng(0).random(npts) * 10.0
    _pwpoly_design_numba(x[:100], ax.lo, ax.hi, ax.cells, ax.degree, ax.n)
    t_nb = timeit(lambda: _pwpoly_design_numba(
        x, ax.lo, ax.hi, ax.cells, ax.degree, ax.n))
    t_np = timeit(lambda: _pwpoly_design_numpy(
        x, ax.lo, ax.hi, ax.cells, ax.degree, ax.n))
    return "pwpoly design (2M pts, n=24)", t_nb, t_np


def bench_full_assembly(P=200_000, n=16, d=2):
    rng = np.random.default_rng(1)
    psi = rng.random((P, n))
    psi[psi < 0.7] = 0.0  # mimic B-spline sparsity
    sinv = np.tile(np.eye(d), (P, 1, 1)) + 0.1 * rng.random((P, d, d))
    sinv = 0.5 * (sinv + sinv.transpose(0, 2, 1))
    dt = np.full(P, 1e-3)
    dx = rng.random((P, d))

    def run_nb():
        A = np.zeros((n * d, n * d))
        b = np.zeros(n * d)
        _accumulate_full_numba(psi, sinv, dt, dx, A, b)
        return A, b

    def run_np():
        A = np.zeros((n * d, n * d))
        b = np.zeros(n * d)
        _accumulate_full_numpy(psi, sinv, dt, dx, A, b)
        return A, b

    run_nb()  # compile
    t_nb = timeit(run_nb)
    t_np = timeit(run_np)
    Anb, bnb = run_nb()
    Anp, bnp = run_np()
    assert np.abs(Anb - Anp).max() < 1e-8 * np.abs(Anp).max()
    return f"full-Sigma assembly (P={P}, n={n}, d={d})", t_nb, t_np


def bench_kernel_features(P=4000, N=20, dp=2, nb=10):
    rng = np.random.default_rng(2)
    X = rng.random((P, N, dp)) * 4.0
    dX = rng.random((P, N, dp)) * 0.01
    dt = np.full(P, 4e-3)
    ax = Basis1D("bspline", 2, nb - 2, 0.0, 6.0)
    sinv = np.eye(dp) * 100.0

    def run_nb():
        A = np.zeros((nb, nb))
        rhs = np.zeros(nb)
        _accumulate_kernel_numba(X, dX, dt, ax.knots, ax.degree, True,
                                 ax.lo, ax.hi, ax.cells, nb, sinv, A, rhs)
        return A, rhs

    def run_np():
        A = np.zeros((nb, nb))
        rhs = np.zeros(nb)
        _accumulate_kernel_numpy(X, dX, dt, ax, ax.lo, ax.hi, sinv, A, rhs)
        return A, rhs

    run_nb()
    t_nb = timeit(run_nb)
    t_np = timeit(run_np)
    Anb, rnb = run_nb()
    Anp, rnp = run_np()
    assert np.abs(Anb - Anp).max() < 1e-8 * np.abs(Anp).max()
    return f"pairwise kernel features (P={P}, N={N})", t_nb, t_np


def main():
    if not NUMBA_ENABLED:
        raise SystemExit(
            "numba path is disabled (SDEINFER_DISABLE_NUMBA set or numba "
            "missing); the benchmark needs both paths"
        )
    rows = [
        bench_bspline(),
        bench_pwpoly(),
        bench_full_assembly(),
        bench_kernel_features(),
    ]
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numba':>9}  {'numpy':>9}  {'speedup':>8}")
    for name, t_nb, t_np in rows:
        print(f"{name:<{width}}  {t_nb:>8.3f}s  {t_np:>8.3f}s  "
              f"{t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
