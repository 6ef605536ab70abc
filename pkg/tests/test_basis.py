import numpy as np
import pytest

from sdeinfer._accel import NUMBA_ENABLED
from sdeinfer.basis import (
    BasisError,
    BasisSpec,
    Domain,
    build_domain,
    eval_basis,
    make_basis,
    spec_from_dict,
    spec_to_dict,
    tensor_product,
    _bspline_design_numpy,
    _clamped_knots,
    _pwpoly_design_numpy,
)
from sdeinfer.model import TimeGrid, TrajectoryBundle


def bundle_from_states(states):
    states = np.asarray(states, dtype=float)
    g = TimeGrid.uniform(1.0, 1.0 / (states.shape[1] - 1))
    return TrajectoryBundle(g, states)


def test_build_domain_degenerate_range():
    b = bundle_from_states(np.full((1, 3, 1), 5.0))
    d = build_domain(b, 0.0)
    assert d.lower[0] == pytest.approx(4.5)
    assert d.upper[0] == pytest.approx(5.5)


def test_build_domain_minmax():
    states = np.linspace(0, 10, 11).reshape(1, 11, 1)
    d = build_domain(bundle_from_states(states), 0.0)
    assert (d.lower[0], d.upper[0]) == (0.0, 10.0)


def test_build_domain_padding():
    states = np.linspace(0, 10, 11).reshape(1, 11, 1)
    d = build_domain(bundle_from_states(states), 0.05)
    assert d.lower[0] == pytest.approx(-0.5)
    assert d.upper[0] == pytest.approx(10.5)


# per-dimension (cells, degree) pairs used by the acceptance experiments
ACCEPTANCE_1D_SPECS = [(8, 2), (6, 2), (2, 2), (1, 2), (4, 2)]


@pytest.mark.parametrize("cells,degree", ACCEPTANCE_1D_SPECS)
def test_partition_of_unity(cells, degree):
    dom = Domain(np.array([-1.0]), np.array([3.0]))
    basis = make_basis(BasisSpec("bspline", degree, cells, dom))
    assert basis.n == cells + degree
    pts = np.random.default_rng(1).random((1000, 1)) * 4.0 - 1.0
    design = basis.design_matrix(pts)
    assert np.abs(design.sum(axis=1) - 1.0).max() <= 1e-12
    assert design.min() >= 0.0


def cox_de_boor_reference(x, i, p, knots):
    # textbook recursion, independent of the library implementation
    if p == 0:
        last = knots[i + 1] == knots[-1]
        inside = knots[i] <= x < knots[i + 1] or (last and x == knots[i + 1])
        return 1.0 if inside else 0.0
    left = 0.0
    if knots[i + p] != knots[i]:
        left = (x - knots[i]) / (knots[i + p] - knots[i]) \
            * cox_de_boor_reference(x, i, p - 1, knots)
    right = 0.0
    if knots[i + p + 1] != knots[i + 1]:
        right = (knots[i + p + 1] - x) / (knots[i + p + 1] - knots[i + 1]) \
            * cox_de_boor_reference(x, i + 1, p - 1, knots)
    return left + right


def test_bspline_matches_cox_de_boor_reference():
    dom = Domain(np.array([0.0]), np.array([1.0]))
    basis = make_basis(BasisSpec("bspline", 2, 3, dom))
    knots = _clamped_knots(0.0, 1.0, 3, 2)
    xs = np.concatenate([[0.0, 0.5, 1.0],
                         np.random.default_rng(2).random(50)])
    design = basis.design_matrix(xs[:, None])
    for j, x in enumerate(xs):
        ref = [cox_de_boor_reference(float(x), i, 2, knots)
               for i in range(basis.n)]
        assert design[j] == pytest.approx(ref, abs=1e-13)


def test_pwpoly_indicator():
    dom = Domain(np.array([0.0]), np.array([1.0]))
    basis = make_basis(BasisSpec("pwpoly", 0, 2, dom))
    assert basis.n == 2
    assert eval_basis(basis, [0.25]) == pytest.approx([1.0, 0.0])
    assert eval_basis(basis, [0.75]) == pytest.approx([0.0, 1.0])
    assert eval_basis(basis, [1.0]) == pytest.approx([0.0, 1.0])


def test_pwpoly_matches_legendre():
    dom = Domain(np.array([0.0]), np.array([2.0]))
    basis = make_basis(BasisSpec("pwpoly", 3, 2, dom))
    xs = np.random.default_rng(3).random(40) * 2.0
    design = basis.design_matrix(xs[:, None])
    for j, x in enumerate(xs):
        cell = min(int(x), 1)
        u = 2.0 * (x - cell) - 1.0
        for deg in range(4):
            coef = np.zeros(4)
            coef[deg] = 1.0
            expected = np.polynomial.legendre.legval(u, coef)
            assert design[j, cell * 4 + deg] == pytest.approx(expected,
                                                              abs=1e-12)


def test_tensor_product_sizes():
    dom1 = Domain(np.array([0.0]), np.array([1.0]))
    s = BasisSpec("bspline", 2, 2, dom1)  # 4 functions per dim
    basis = tensor_product([s, s])
    assert basis.n == 16


def test_tensor_indicator_product():
    dom1 = Domain(np.array([0.0]), np.array([1.0]))
    s = BasisSpec("pwpoly", 0, 2, dom1)
    basis = tensor_product([s, s])
    vals = eval_basis(basis, [0.25, 0.75])
    assert vals.sum() == 1.0
    assert np.count_nonzero(vals) == 1
    assert vals[0 * 2 + 1] == 1.0  # row-major: cell (0, 1)


def test_tensor_equals_product_of_1d():
    dom1 = Domain(np.array([-1.0]), np.array([2.0]))
    dom2 = Domain(np.array([0.0]), np.array([5.0]))
    sa = BasisSpec("bspline", 2, 3, dom1)
    sb = BasisSpec("bspline", 1, 4, dom2)
    basis = tensor_product([sa, sb])
    a1 = make_basis(sa)
    b1 = make_basis(sb)
    pts = np.random.default_rng(4).random((200, 2)) * [3.0, 5.0] + [-1.0, 0.0]
    full = basis.design_matrix(pts)
    da = a1.design_matrix(pts[:, :1])
    db = b1.design_matrix(pts[:, 1:])
    outer = (da[:, :, None] * db[:, None, :]).reshape(pts.shape[0], -1)
    assert np.abs(full - outer).max() <= 1e-14


def test_local_support():
    dom = Domain(np.array([0.0]), np.array([8.0]))
    basis = make_basis(BasisSpec("bspline", 2, 8, dom))
    knots = basis.axes[0].knots
    xs = np.linspace(0, 8, 1601)
    design = basis.design_matrix(xs[:, None])
    for i in range(basis.n):
        support = design[:, i] != 0.0
        # support contained in [knots[i], knots[i+degree+1]]
        lo, hi = knots[i], knots[i + 3]
        outside = (xs < lo - 1e-12) | (xs > hi + 1e-12)
        assert not np.any(support & outside)
        assert np.all(design[outside, i] == 0.0)


def test_out_of_domain_clamps():
    dom = Domain(np.array([0.0]), np.array([1.0]))
    basis = make_basis(BasisSpec("bspline", 2, 4, dom))
    far = basis.design_matrix(np.array([[5.0], [-3.0]]))
    edge = basis.design_matrix(np.array([[1.0], [0.0]]))
    assert np.array_equal(far, edge)


@pytest.mark.parametrize("kind,cells,degree,dim", [
    ("bspline", 8, 2, 1),
    ("bspline", 6, 2, 1),
    ("bspline", 2, 2, 2),
    ("bspline", 4, 2, 2),
    ("bspline", 1, 2, 3),
    ("pwpoly", 4, 2, 1),
])
def test_gram_matrix_full_rank(kind, cells, degree, dim):
    dom = Domain(np.zeros(dim), np.full(dim, 1.0))
    basis = make_basis(BasisSpec(kind, degree, cells, dom))
    per_dim = max(4, int(np.ceil(2000 ** (1 / dim))))
    axes = [np.linspace(0, 1, per_dim)] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    D = basis.design_matrix(pts)
    G = D.T @ D / pts.shape[0]
    assert np.linalg.cond(G) < 1e10


def test_basis_count_cap():
    dom = Domain(np.zeros(3), np.ones(3))
    with pytest.raises(BasisError, match="cap"):
        make_basis(BasisSpec("bspline", 2, 200, dom))


def test_spec_dict_round_trip():
    dom = Domain(np.array([0.0, -1.0]), np.array([2.0, 3.0]))
    spec = BasisSpec("pwpoly", 1, (3, 4), dom)
    again = spec_from_dict(spec_to_dict(spec))
    assert again.kind == spec.kind
    assert again.degree == spec.degree
    assert again.knots_per_dim == spec.knots_per_dim
    assert np.array_equal(again.domain.lower, spec.domain.lower)


@pytest.mark.skipif(not NUMBA_ENABLED, reason="numba path disabled")
def test_numba_and_numpy_twins_agree():
    rng = np.random.default_rng(6)
    x = np.ascontiguousarray(rng.random(5000) * 4.0 - 1.0)
    from sdeinfer.basis import _bspline_design_numba, _pwpoly_design_numba

    knots = _clamped_knots(-1.0, 3.0, 7, 3)
    n = 7 + 3
    a = _bspline_design_numba(x, knots, 3, n)
    b = _bspline_design_numpy(x, knots, 3, n)
    assert np.abs(a - b).max() <= 1e-15

    a = _pwpoly_design_numba(x, -1.0, 3.0, 5, 2, 15)
    b = _pwpoly_design_numpy(x, -1.0, 3.0, 5, 2, 15)
    assert np.abs(a - b).max() <= 1e-15
