import numpy as np
import pytest

from sdeinfer.expr import ExprDomainError
from sdeinfer.model import (
    Initial,
    ModelError,
    SdeModel,
    TimeGrid,
    TrajectoryBundle,
    eval_drift,
)


def test_time_grid_invariants():
    with pytest.raises(ModelError):
        TimeGrid(np.array([0.0]))
    with pytest.raises(ModelError):
        TimeGrid(np.array([0.1, 0.2]))  # must start at 0
    with pytest.raises(ModelError):
        TimeGrid(np.array([0.0, 0.5, 0.5]))  # strictly increasing
    g = TimeGrid.uniform(1.0, 0.001)
    assert g.length == 1001
    assert g.horizon == 1.0
    assert np.all(g.steps > 0)


def test_dt_must_divide_horizon():
    with pytest.raises(ModelError):
        TimeGrid.uniform(1.0, 0.0003)


def test_bundle_validation():
    g = TimeGrid.uniform(1.0, 0.5)
    ok = np.zeros((2, 3, 1))
    TrajectoryBundle(g, ok)
    with pytest.raises(ModelError):
        TrajectoryBundle(g, np.zeros((2, 4, 1)))  # wrong L
    bad = ok.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ModelError):
        TrajectoryBundle(g, bad)
    with pytest.raises(ModelError):
        TrajectoryBundle(g, ok, noise=np.zeros((2, 3, 1)))  # L-1 expected


def make_2d_poly_model():
    return SdeModel.from_strings(
        2,
        ["0.4*x1 - 0.1*x1*x2", "-0.8*x2 + 0.2*x1^2"],
        [["0.6", "0.2"], ["0.2", "0.8"]],
        Initial.uniform([0.0, 0.0], [10.0, 10.0]),
    )


def test_eval_drift_2d_polynomial():
    model = make_2d_poly_model()
    out = eval_drift(model, [1.0, 1.0])
    assert out == pytest.approx([0.3, -0.6], abs=1e-14)


def test_eval_drift_zero():
    model = SdeModel.from_strings(1, ["0"], [["1"]], Initial.point([0.0]))
    assert eval_drift(model, [123.0]) == pytest.approx([0.0])


def test_eval_drift_linear():
    model = SdeModel.from_strings(1, ["0.08*x1"], [["0.6"]],
                                  Initial.point([0.0]))
    assert eval_drift(model, [5.0]) == pytest.approx([0.4], abs=1e-15)


def test_drift_domain_error_names_component():
    model = SdeModel.from_strings(2, ["x1", "sqrt(x2)"], [["1", "0"], ["0", "1"]],
                                  Initial.point([0.0, 0.0]))
    with pytest.raises(ExprDomainError, match="component 2"):
        eval_drift(model, [1.0, -1.0])


SIGMA_CORPUS = [
    (1, [["0.6"]]),
    (1, [["0.2*x1"]]),
    (2, [["0.6", "0.2"], ["0.2", "0.8"]]),
    (2, [["0.4*x1", "0.025*x1*x2"], ["0.025*x2*x1", "0.6*x2"]]),
    (3, [["0.6", "0", "0"], ["0", "0.8", "0"], ["0", "0", "0.5"]]),
]


@pytest.mark.parametrize("dim,sigma", SIGMA_CORPUS)
def test_sigma_symmetry_on_sample_points(dim, sigma):
    drift = ["0"] * dim
    model = SdeModel.from_strings(dim, drift, sigma,
                                  Initial.uniform([0.0] * dim, [1.0] * dim))
    pts = np.random.default_rng(5) .random((100, dim)) * 10.0
    mats = model.sigma_at(pts)
    assert np.abs(mats - mats.transpose(0, 2, 1)).max() <= 1e-12


def test_asymmetric_sigma_rejected():
    with pytest.raises(ModelError, match="symmetric"):
        SdeModel.from_strings(2, ["0", "0"],
                              [["1", "0.5"], ["0.2", "1"]],
                              Initial.point([0.0, 0.0]))
    with pytest.raises(ModelError, match="sigma"):
        SdeModel.from_strings(2, ["0", "0"],
                              [["1", "x1"], ["x2", "1"]],
                              Initial.point([0.0, 0.0]))


def test_sigma_structure_flags():
    model = make_2d_poly_model()
    assert model.sigma_is_constant
    assert not model.sigma_is_diagonal
    diag = SdeModel.from_strings(2, ["0", "0"], [["x1", "0"], ["0", "1"]],
                                 Initial.point([1.0, 1.0]))
    assert diag.sigma_is_diagonal
    assert not diag.sigma_is_constant


def test_initial_point_cycling():
    init = Initial.point([1.0], [2.0])
    rng = np.random.default_rng(0)
    assert init.sample(rng, 0) == pytest.approx([1.0])
    assert init.sample(rng, 1) == pytest.approx([2.0])
    assert init.sample(rng, 2) == pytest.approx([1.0])


def test_initial_uniform_bounds():
    with pytest.raises(ModelError):
        Initial.uniform([1.0], [0.0])
    init = Initial.uniform([0.0, -1.0], [1.0, 1.0])
    rng = np.random.default_rng(0)
    for m in range(10):
        x = init.sample(rng, m)
        assert np.all(x >= [0.0, -1.0]) and np.all(x <= [1.0, 1.0])


def test_transition_arrays_shapes():
    g = TimeGrid.uniform(1.0, 0.25)
    states = np.arange(2 * 5 * 1, dtype=float).reshape(2, 5, 1)
    b = TrajectoryBundle(g, states)
    x, dx, dt = b.transition_arrays()
    assert x.shape == (8, 1) and dx.shape == (8, 1) and dt.shape == (8,)
    assert np.all(dx == 1.0)
    assert np.all(dt == 0.25)
