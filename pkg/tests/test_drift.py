import numpy as np
import pytest

from sdeinfer.basis import BasisSpec, Domain, build_domain, make_basis
from sdeinfer.drift import (
    ConstantCov,
    DriftEstimate,
    EstimatorError,
    assemble_diagonal,
    assemble_full,
    cov_from_model,
    estimate_drift,
    loss,
    read_drift_estimate,
    solve,
    write_drift_estimate,
)
from sdeinfer.linalg import solve_sym
from sdeinfer.metrics import EmpiricalRho, l2_rho_error
from sdeinfer.model import Initial, SdeModel, TimeGrid, TrajectoryBundle
from sdeinfer.simulate import SimConfig, euler_maruyama


def bundle_1d(states, T=1.0):
    states = np.asarray(states, dtype=float)
    grid = TimeGrid.uniform(T, T / (states.shape[1] - 1))
    return TrajectoryBundle(grid, states)


def poly_model(sigma="0.6"):
    return SdeModel.from_strings(1, ["2 + 0.08*x1 - 0.01*x1^2"], [[sigma]],
                                 Initial.uniform([0.0], [10.0]))


def constant_basis():
    dom = Domain(np.array([-10.0]), np.array([10.0]))
    return make_basis(BasisSpec("pwpoly", 0, 1, dom))


def test_single_step_single_basis():
    # one trajectory, one step, psi == 1, sigma = 1:
    # A = dt/(2T), b = dx/(2T), alpha = dx/dt
    b = bundle_1d([[[0.0], [0.7]]], T=0.5)
    basis = constant_basis()
    cov = ConstantCov(np.array([[1.0]]))
    system = assemble_diagonal(b, basis, cov)
    dt = 0.5
    assert system.A[0, 0, 0] == pytest.approx(dt / (2 * 0.5))
    assert system.b[0, 0] == pytest.approx(0.7 / (2 * 0.5))
    est = solve(system)
    assert est.coeffs[0, 0] == pytest.approx(0.7 / dt)


def test_covariance_scaling_homogeneity():
    rng = np.random.default_rng(0)
    b = bundle_1d(rng.random((4, 11, 1)))
    basis = make_basis(BasisSpec("bspline", 2, 3,
                                 Domain(np.array([0.0]), np.array([1.0]))))
    c = 3.7
    s1 = assemble_diagonal(b, basis, ConstantCov(np.array([[1.0]])))
    s2 = assemble_diagonal(b, basis, ConstantCov(np.array([[c]])))
    assert np.allclose(s2.A, s1.A / c, rtol=1e-14)
    assert np.allclose(s2.b, s1.b / c, rtol=1e-14)
    a1 = solve(s1).coeffs
    a2 = solve(s2).coeffs
    assert np.abs(a1 - a2).max() <= 1e-10 * max(1.0, np.abs(a1).max())


def eq12_loss_reference(bundle, f_at_point, var_at_point):
    """Literal per-term evaluation of the discretized loss (diagonal case)."""
    total = 0.0
    T = bundle.grid.horizon
    M = bundle.count
    for m in range(M):
        for l in range(bundle.grid.length - 1):
            x = bundle.states[m, l]
            dxv = bundle.states[m, l + 1] - x
            dt = bundle.grid.times[l + 1] - bundle.grid.times[l]
            f = np.asarray(f_at_point(x), dtype=float)
            v = np.asarray(var_at_point(x), dtype=float)
            total += float(np.sum(f * f / v) * dt - 2.0 * np.sum(f * dxv / v))
    return total / (2.0 * T * M)


def test_assembly_matches_bruteforce_quadratic():
    # two-cell indicator basis on a 5-step synthetic path; recover A, b by
    # evaluating the reference loss on a coefficient grid (polarization)
    states = np.array([[[0.1], [0.4], [0.9], [0.3], [0.6], [0.2]]])
    b = bundle_1d(states)
    dom = Domain(np.array([0.0]), np.array([1.0]))
    basis = make_basis(BasisSpec("pwpoly", 0, 2, dom))
    cov = ConstantCov(np.array([[0.49]]))
    system = assemble_diagonal(b, basis, cov)

    def loss_at(alpha):
        def f_at_point(x):
            psi = basis.eval(x)
            return np.array([float(psi @ alpha)])
        return eq12_loss_reference(b, f_at_point, lambda x: np.array([0.49]))

    n = basis.n
    zero = loss_at(np.zeros(n))
    assert zero == pytest.approx(0.0, abs=1e-15)
    A_ref = np.empty((n, n))
    b_ref = np.empty(n)
    eye = np.eye(n)
    # polarization of L(alpha) = alpha' A alpha - 2 alpha' b
    L_single = [loss_at(eye[i]) for i in range(n)]
    L_double = [[loss_at(eye[i] + eye[j]) for j in range(n)] for i in range(n)]
    L_two = [loss_at(2 * eye[i]) for i in range(n)]
    for i in range(n):
        # L(2 e_i) = 4 A_ii - 4 b_i and L(e_i) = A_ii - 2 b_i
        A_ref[i, i] = 0.5 * L_two[i] - L_single[i]
        b_ref[i] = 0.5 * (A_ref[i, i] - L_single[i])
    for i in range(n):
        for j in range(n):
            if i != j:
                # L(e_i + e_j) - L(e_i) - L(e_j) = 2 A_ij (b terms cancel)
                A_ref[i, j] = 0.5 * (
                    L_double[i][j] - L_single[i] - L_single[j]
                )
    assert system.A[0] == pytest.approx(A_ref, abs=1e-12)
    assert system.b[0] == pytest.approx(b_ref, abs=1e-12)


def corr2d_model():
    return SdeModel.from_strings(
        2,
        ["0.4*x1 - 0.1*x1*x2", "-0.8*x2 + 0.2*x1^2"],
        [["0.6", "0.2"], ["0.2", "0.8"]],
        Initial.uniform([0.0, 0.0], [10.0, 10.0]),
    )


def test_full_assembly_matches_direct_loss():
    # quadratic-form identity against the independent loss evaluation with
    # the correlated Sigma = sigma sigma^T from the 2d example
    model = corr2d_model()
    b = euler_maruyama(model, SimConfig(T=0.2, dt=0.01, M=5, seed=2))
    basis = make_basis(BasisSpec("bspline", 1, 2, build_domain(b, 0.0)))
    cov = cov_from_model(model)
    Sigma = np.array([[0.40, 0.28], [0.28, 0.68]])
    assert np.allclose(cov.matrix, Sigma, atol=1e-12)
    system = assemble_full(b, basis, cov)
    rng = np.random.default_rng(3)
    n, d = basis.n, 2
    for _ in range(20):
        coeffs = rng.normal(size=(n, d))
        lval = loss(b, DriftEstimate(basis, coeffs), cov)
        alpha = coeffs.T.reshape(-1)
        qval = float(alpha @ system.A @ alpha - 2.0 * alpha @ system.b)
        assert lval == pytest.approx(qval, rel=1e-10, abs=1e-12)


def test_full_reduces_to_diagonal():
    model = SdeModel.from_strings(
        2, ["0.1*x1", "-0.2*x2"], [["0.5", "0"], ["0", "0.9"]],
        Initial.uniform([0.0, 0.0], [1.0, 1.0]))
    b = euler_maruyama(model, SimConfig(T=0.5, dt=0.01, M=10, seed=4))
    basis = make_basis(BasisSpec("bspline", 2, 2, build_domain(b, 0.0)))
    cov = cov_from_model(model)
    a_diag = solve(assemble_diagonal(b, basis, cov)).coeffs
    a_full = solve(assemble_full(b, basis, cov)).coeffs
    scale = np.abs(a_diag).max()
    assert np.abs(a_full - a_diag).max() <= 1e-8 * scale


def test_single_basis_full_closed_form():
    # n = 1, psi == 1, one step: solution is dx/dt regardless of Sigma
    states = np.zeros((1, 2, 2))
    states[0, 1] = [0.3, -0.4]
    grid = TimeGrid.uniform(0.5, 0.5)
    b = TrajectoryBundle(grid, states)
    dom = Domain(np.zeros(2), np.ones(2))
    basis = make_basis(BasisSpec("pwpoly", 0, 1, dom))
    cov = ConstantCov(np.array([[0.4, 0.28], [0.28, 0.68]]))
    est = solve(assemble_full(b, basis, cov))
    assert est.coeffs[0] == pytest.approx([0.3 / 0.5, -0.4 / 0.5], rel=1e-12)


def test_solve_identity():
    basis = constant_basis()
    from sdeinfer.drift import NormalSystem
    system = NormalSystem("diagonal", basis, 1,
                          np.eye(1)[None, :, :], np.array([[2.5]]))
    est = solve(system)
    assert est.coeffs[0, 0] == 2.5
    assert not est.regularized


def test_rank_deficient_ridge_fallback():
    # data confined to the left half of the domain: right cells untouched
    rng = np.random.default_rng(5)
    states = (rng.random((20, 51, 1)) * 0.5)
    b = bundle_1d(states)
    dom = Domain(np.array([0.0]), np.array([1.0]))
    basis = make_basis(BasisSpec("pwpoly", 1, 4, dom))  # 8 functions
    cov = ConstantCov(np.array([[1.0]]))
    system = assemble_diagonal(b, basis, cov)
    est = solve(system)
    assert est.regularized
    untouched = np.abs(est.coeffs[-2:, 0])
    assert untouched.max() <= 1e-6 * max(np.abs(est.coeffs).max(), 1e-30)


def test_solver_minimality():
    model = poly_model()
    b = euler_maruyama(model, SimConfig(T=1.0, dt=0.01, M=50, seed=6))
    basis = make_basis(BasisSpec("bspline", 2, 8, build_domain(b, 0.0)))
    cov = cov_from_model(model)
    system = assemble_diagonal(b, basis, cov)
    est = solve(system)
    base = loss(b, est, cov)
    rng = np.random.default_rng(7)
    for _ in range(100):
        v = rng.normal(size=est.coeffs.shape)
        v /= np.linalg.norm(v)
        perturbed = DriftEstimate(basis, est.coeffs + 1e-3 * v)
        assert loss(b, perturbed, cov) >= base - 1e-12


def test_loss_of_zero_drift_is_zero():
    model = poly_model()
    b = euler_maruyama(model, SimConfig(T=0.5, dt=0.01, M=4, seed=8))
    cov = cov_from_model(model)
    assert loss(b, lambda x: np.zeros_like(x), cov) == 0.0


def test_loss_quadratic_identity_diagonal():
    model = poly_model()
    b = euler_maruyama(model, SimConfig(T=1.0, dt=0.01, M=20, seed=9))
    basis = make_basis(BasisSpec("bspline", 2, 5, build_domain(b, 0.0)))
    cov = cov_from_model(model)
    system = assemble_diagonal(b, basis, cov)
    rng = np.random.default_rng(10)
    for _ in range(20):
        alpha = rng.normal(size=(basis.n, 1))
        lval = loss(b, DriftEstimate(basis, alpha), cov)
        qval = float(alpha[:, 0] @ system.A[0] @ alpha[:, 0]
                     - 2.0 * alpha[:, 0] @ system.b[0])
        assert lval == pytest.approx(qval, rel=1e-10, abs=1e-13)


def test_true_drift_beats_shifted_drift():
    model = poly_model()
    b = euler_maruyama(model, SimConfig(T=1.0, dt=0.001, M=2000, seed=11))
    cov = cov_from_model(model)
    l_true = loss(b, model, cov)
    l_shift = loss(b, lambda x: model.drift_at(x) + 0.5, cov)
    assert l_true < l_shift


def test_scale_invariance_full_path():
    model = corr2d_model()
    b = euler_maruyama(model, SimConfig(T=0.5, dt=0.005, M=20, seed=12))
    basis = make_basis(BasisSpec("bspline", 2, 2, build_domain(b, 0.0)))
    cov = cov_from_model(model)
    a1 = solve(assemble_full(b, basis, cov)).coeffs
    a2 = solve(assemble_full(b, basis, cov.scaled(7.3))).coeffs
    assert np.abs(a1 - a2).max() <= 1e-10 * max(1.0, np.abs(a1).max())


def test_scale_invariance_diagonal_path():
    model = poly_model()
    b = euler_maruyama(model, SimConfig(T=0.5, dt=0.005, M=20, seed=13))
    basis = make_basis(BasisSpec("bspline", 2, 4, build_domain(b, 0.0)))
    cov = cov_from_model(model)
    a1 = solve(assemble_diagonal(b, basis, cov)).coeffs
    a2 = solve(assemble_diagonal(b, basis, cov.scaled(0.031))).coeffs
    assert np.abs(a1 - a2).max() <= 1e-10 * max(1.0, np.abs(a1).max())


def test_optimality_residual():
    model = poly_model()
    b = euler_maruyama(model, SimConfig(T=1.0, dt=0.01, M=100, seed=14))
    basis = make_basis(BasisSpec("bspline", 2, 6, build_domain(b, 0.0)))
    cov = cov_from_model(model)
    system = assemble_diagonal(b, basis, cov)
    est = solve(system)
    res = np.linalg.norm(system.A[0] @ est.coeffs[:, 0] - system.b[0])
    assert res <= 1e-8 * np.linalg.norm(system.b[0])


def test_diagonal_rejects_correlated_cov():
    model = corr2d_model()
    b = euler_maruyama(model, SimConfig(T=0.1, dt=0.01, M=2, seed=15))
    basis = make_basis(BasisSpec("bspline", 1, 2, build_domain(b, 0.0)))
    with pytest.raises(EstimatorError, match="diagonal"):
        assemble_diagonal(b, basis, cov_from_model(model))


def test_nonpositive_variance_reported():
    model = SdeModel.from_strings(1, ["0"], [["x1"]],
                                  Initial.point([0.0]))
    states = np.array([[[1.0], [0.5], [-0.5], [0.2]]])
    b = bundle_1d(states)
    basis = constant_basis()
    from sdeinfer.drift import DiagonalCov
    from sdeinfer.expr import parse_expr
    cov = DiagonalCov([parse_expr("x1", 1)])
    with pytest.raises(EstimatorError, match=r"trajectory 0, step 2"):
        assemble_diagonal(b, basis, cov)


def test_consistency_trend_in_M():
    # relative L2(rho) error at M=4000 <= error at M=250, averaged on 5 seeds
    model = poly_model()
    errs = {}
    for M in (250, 4000):
        vals = []
        for seed in range(5):
            b = euler_maruyama(model, SimConfig(T=1.0, dt=0.004, M=M,
                                                seed=100 + seed))
            basis = make_basis(BasisSpec("bspline", 2, 8, build_domain(b, 0.0)))
            est = estimate_drift(b, basis, cov_from_model(model))
            vals.append(l2_rho_error(model, est,
                                     EmpiricalRho.from_bundle(b)).relative)
        errs[M] = np.mean(vals)
    assert errs[4000] <= errs[250]


def test_estimate_file_round_trip(tmp_path):
    model = poly_model()
    b = euler_maruyama(model, SimConfig(T=0.5, dt=0.01, M=10, seed=16))
    basis = make_basis(BasisSpec("bspline", 2, 4, build_domain(b, 0.0)))
    est = estimate_drift(b, basis, cov_from_model(model))
    path = tmp_path / "est.sdee"
    write_drift_estimate(path, est)
    back = read_drift_estimate(path)
    assert np.array_equal(back.coeffs, est.coeffs)
    pts = np.linspace(0, 10, 7)[:, None]
    assert np.array_equal(back.drift_at(pts), est.drift_at(pts))


def test_estimate_evaluation_matches_coefficient_sum():
    model = poly_model()
    b = euler_maruyama(model, SimConfig(T=0.5, dt=0.01, M=10, seed=17))
    basis = make_basis(BasisSpec("bspline", 2, 4, build_domain(b, 0.0)))
    est = estimate_drift(b, basis, cov_from_model(model))
    pts = np.random.default_rng(18).random((50, 1)) * 10.0
    direct = np.zeros((50, 1))
    for i in range(basis.n):
        direct[:, 0] += est.coeffs[i, 0] * basis.design_matrix(pts)[:, i]
    assert np.abs(est.drift_at(pts) - direct).max() <= 1e-14


def test_solve_sym_zero_rhs():
    x, reg = solve_sym(np.eye(3), np.zeros(3))
    assert np.all(x == 0.0) and not reg
