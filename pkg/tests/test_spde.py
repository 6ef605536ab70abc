import numpy as np
import pytest

from sdeinfer.model import ModelError
from sdeinfer.spde import (
    CouplingMatrices,
    SpdeError,
    SpdeSpec,
    compute_coupling,
    estimate_theta_constant,
    estimate_theta_piecewise,
    piecewise_normal_system,
    simulate_modes,
)

# Explicit Euler needs theta * lambda_max * dt < 2; the experiments here use
# dt = 0.001 (theta * lambda * dt <= 0.8 for every case below).
DT = 0.001


def test_zero_noise_zero_initial_is_identically_zero():
    spec = SpdeSpec.constant_heat(5, sigma=0.0, dt=DT)
    b = simulate_modes(spec, 0)
    assert np.all(b.states == 0.0)


def test_single_mode_stationary_variance():
    # du = -theta lam u dt + sigma q dw -> stationary var sigma^2 q^2/(2 theta lam)
    theta, lam, sigma = 2.0, 1.0, 0.1
    spec = SpdeSpec(1, np.array([lam]), np.array([1.0]), sigma,
                    5.0, DT, 2000, theta=theta)
    b = simulate_modes(spec, 13)
    uT = b.states[:, -1, 0]
    var_true = sigma**2 / (2 * theta * lam) * (1 - np.exp(-2 * theta * lam * 5.0))
    se = var_true * np.sqrt(2.0 / (spec.M - 1))
    assert abs(uT.var(ddof=1) - var_true) <= 3 * se


def test_equal_thetas_bit_identical_to_constant():
    pw = SpdeSpec.piecewise_heat(8, 3.0, 3.0, dt=DT)
    const = SpdeSpec(8, pw.eigenvalues, pw.q, pw.sigma, pw.T, pw.dt, pw.M,
                     theta=3.0, family="sine_2pi")
    b1 = simulate_modes(pw, 21)
    b2 = simulate_modes(const, 21)
    assert np.array_equal(b1.states, b2.states)


def test_coupling_matrix_identities():
    spec = SpdeSpec.piecewise_heat(12, 2.0, 4.0, dt=DT)
    cm = compute_coupling(spec)
    N = 12
    assert np.abs(cm.B1 + cm.B2 - np.eye(N)).max() <= 1e-10
    assert np.abs(np.diag(cm.B1) - 0.5).max() <= 1e-10
    assert np.abs(cm.B1 - cm.B1.T).max() == 0.0
    # theta1 = theta2 = theta collapses the generator to theta * Lambda
    theta = 1.7
    lam = spec.eigenvalues
    G = (theta * cm.B1 + theta * cm.B2) * lam[None, :]
    assert np.abs(G - np.diag(theta * lam)).max() <= 1e-10


def test_coupling_requires_piecewise_family():
    with pytest.raises(SpdeError):
        compute_coupling(SpdeSpec.constant_heat(5, dt=DT))


def test_constant_estimator_noise_free_exact():
    # EM data from du = -theta lam u dt with sigma = 0 and u0 = 1:
    # the Ito-sum estimator recovers theta to rounding on its own grid
    spec = SpdeSpec(5, np.arange(1.0, 6.0) ** 2, np.ones(5), 0.0,
                    1.0, DT, 1, theta=2.0)
    b = simulate_modes(spec, 0, initial=1.0)
    assert estimate_theta_constant(b, spec) == pytest.approx(2.0, abs=1e-12)


def test_constant_estimator_exact_exponential_data_has_dt_bias():
    # on exactly-sampled exponential decay the estimator has O(dt) bias
    theta, lam = 2.0, np.array([1.0, 4.0])
    for dt, tol in ((0.01, 0.09), (0.001, 0.009)):
        spec = SpdeSpec(2, lam, np.ones(2), 0.0, 1.0, dt, 1, theta=theta)
        times = np.arange(0, int(round(1.0 / dt)) + 1) * dt
        states = np.exp(-theta * lam[None, :] * times[:, None])[None, :, :]
        from sdeinfer.model import TimeGrid, TrajectoryBundle
        b = TrajectoryBundle(TimeGrid(times), states)
        err = abs(estimate_theta_constant(b, spec) - theta)
        assert 0 < err <= tol


def test_constant_estimator_n20_band():
    # documented seed: |theta_hat - 2| <= 0.01 at N = 20, M = 1
    spec = SpdeSpec.constant_heat(20, dt=DT)
    b = simulate_modes(spec, 40)
    assert abs(estimate_theta_constant(b, spec) - 2.0) <= 0.01


def test_constant_estimator_n1_finite():
    spec = SpdeSpec.constant_heat(1, dt=DT)
    th = estimate_theta_constant(simulate_modes(spec, 0), spec)
    assert np.isfinite(th)


def test_all_zero_modes_rejected():
    spec = SpdeSpec.constant_heat(3, sigma=0.0, dt=DT)
    b = simulate_modes(spec, 0)
    with pytest.raises(SpdeError):
        estimate_theta_constant(b, spec)


@pytest.mark.parametrize("pair,seed", [((2.0, 4.0), 3), ((1.0, 5.0), 3)])
def test_piecewise_estimator_n20(pair, seed):
    spec = SpdeSpec.piecewise_heat(20, *pair, dt=DT)
    b = simulate_modes(spec, seed)
    t1, t2 = estimate_theta_piecewise(b, spec)
    rel = np.hypot(t1 - pair[0], t2 - pair[1]) / np.hypot(*pair)
    assert rel <= 0.01


def test_piecewise_estimator_n10_scale():
    # N = 10 errors sit around 0.05-0.10 in the reference experiments
    spec = SpdeSpec.piecewise_heat(10, 2.0, 4.0, dt=DT)
    b = simulate_modes(spec, 3)
    t1, t2 = estimate_theta_piecewise(b, spec)
    rel = np.hypot(t1 - 2.0, t2 - 4.0) / np.hypot(2.0, 4.0)
    assert rel <= 0.15


def test_equal_theta_degeneration_identity():
    # the I-weighted mean of the piecewise estimates equals the constant-case
    # estimate exactly (follows from the normal equations and B1 + B2 = I);
    # the individual estimates carry the difference-direction noise
    spec_eq = SpdeSpec.piecewise_heat(10, 3.0, 3.0, dt=DT)
    cm = compute_coupling(spec_eq)
    b = simulate_modes(spec_eq, 7)
    t1, t2 = estimate_theta_piecewise(b, spec_eq, cm)
    I, _ = piecewise_normal_system(b, spec_eq, cm)
    w1, w2 = I[0, 0] + I[0, 1], I[0, 1] + I[1, 1]
    weighted = (w1 * t1 + w2 * t2) / (w1 + w2)
    spec_c = SpdeSpec(10, spec_eq.eigenvalues, spec_eq.q, spec_eq.sigma,
                      spec_eq.T, spec_eq.dt, spec_eq.M, theta=3.0,
                      family="sine_2pi")
    tc = estimate_theta_constant(b, spec_c)
    assert weighted == pytest.approx(tc, rel=1e-10)
    # both estimates sit near the true value at statistical accuracy
    assert abs(t1 - 3.0) <= 1.0 and abs(t2 - 3.0) <= 1.0


def test_i_matrix_symmetric_psd():
    spec = SpdeSpec.piecewise_heat(8, 2.0, 4.0, dt=DT)
    cm = compute_coupling(spec)
    for seed in range(5):
        b = simulate_modes(spec, seed)
        I, _ = piecewise_normal_system(b, spec, cm)
        assert I[0, 1] == I[1, 0]
        eigs = np.linalg.eigvalsh(I)
        assert eigs.min() >= -1e-10 * max(1.0, eigs.max())


def test_sigma_scaling_leaves_estimates_unchanged():
    spec = SpdeSpec.piecewise_heat(8, 2.0, 4.0, dt=DT)
    cm = compute_coupling(spec)
    b = simulate_modes(spec, 5)
    t = estimate_theta_piecewise(b, spec, cm)
    scaled = SpdeSpec(8, spec.eigenvalues, spec.q, spec.sigma * 3.0,
                      spec.T, spec.dt, spec.M,
                      theta_pair=spec.theta_pair, family="sine_2pi")
    I1, J1 = piecewise_normal_system(b, spec, cm)
    I2, J2 = piecewise_normal_system(b, scaled, cm)
    assert np.allclose(I2 * 9.0, I1, rtol=1e-12)
    assert np.allclose(J2 * 9.0, J1, rtol=1e-12)
    t_scaled = estimate_theta_piecewise(b, scaled, cm)
    assert t_scaled[0] == pytest.approx(t[0], abs=1e-10)
    assert t_scaled[1] == pytest.approx(t[1], abs=1e-10)


def test_convergence_trend_in_modes():
    # seed-averaged |error| non-increasing over N in {1, 2, 5, 10, 20}
    means = []
    for N in (1, 2, 5, 10, 20):
        spec = SpdeSpec.constant_heat(N, dt=DT)
        errs = [abs(estimate_theta_constant(simulate_modes(spec, s), spec) - 2.0)
                for s in range(20)]
        means.append(np.mean(errs))
    assert all(means[i + 1] <= means[i] for i in range(len(means) - 1))


def test_unstable_step_reports_blowup():
    # dt = 0.01 at N = 20 violates the explicit-Euler stability bound
    # (theta * lambda_max * dt = 8 > 2); the simulator must fail loudly,
    # not return garbage
    spec = SpdeSpec.constant_heat(20, dt=0.01)
    with pytest.raises(SpdeError):
        simulate_modes(spec, 0)


def test_spec_validation():
    with pytest.raises(ModelError):
        SpdeSpec(2, np.array([4.0, 1.0]), np.ones(2), 0.1, 1.0, DT, 1,
                 theta=2.0)
    with pytest.raises(ModelError):
        SpdeSpec(2, np.array([1.0, 4.0]), np.ones(2), 0.1, 1.0, DT, 1)
    with pytest.raises(ModelError):
        SpdeSpec(2, np.array([1.0, 4.0]), np.ones(2), 0.1, 1.0, DT, 1,
                 theta=1.0, theta_pair=(1.0, 2.0))
