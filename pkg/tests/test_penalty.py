import numpy as np
import pytest
import scipy.sparse as sparse
from hypothesis import given, strategies as st

from structgcca import penalty as pen
from structgcca.simulate import default_groups

from conftest import fd_grad, rel_err


def _random_op(r, p):
    kind = r.integers(3)
    if kind == 0:
        return pen.build_tv1d(p)
    groups = []
    for _ in range(r.integers(1, 5)):
        lo = int(r.integers(0, p))
        hi = int(r.integers(lo + 1, p + 1))
        groups.append(list(range(lo, hi)))
    if kind == 1:
        return pen.build_group_l12(groups, p)
    return pen.build_group_l12(groups, p, r.uniform(0.2, 3, len(groups)))


# -- construction -----------------------------------------------------------

def test_group_l12_overlapping_value():
    op = pen.build_group_l12([[0, 1], [1, 2]], 3)
    assert pen.exact_value(op, np.array([3.0, 4.0, 0.0])) == pytest.approx(9)


def test_group_l12_single_group_is_l2(rng):
    w = rng.standard_normal(7)
    op = pen.build_group_l12([list(range(7))], 7)
    assert pen.exact_value(op, w) == pytest.approx(np.linalg.norm(w))


def test_simulation_groups_rows():
    op = pen.build_group_l12(default_groups(100), 100)
    assert op.m == 110
    assert op.n_groups == 6


@pytest.mark.parametrize("groups", [[[]], [[0, 5]], [[-1, 0]]])
def test_group_l12_errors(groups):
    with pytest.raises(ValueError):
        pen.build_group_l12(groups, 5)


def test_group_weights_must_be_positive():
    with pytest.raises(ValueError):
        pen.build_group_l12([[0, 1]], 2, [0.0])


def test_tv_examples():
    op = pen.build_tv1d(4)
    assert pen.exact_value(op, np.full(4, 2.5)) == 0.0
    assert pen.exact_value(op, np.array([0.0, 1, 0, 1])) == 3.0
    assert op.m == 3 and op.n_groups == 3
    with pytest.raises(ValueError):
        pen.build_tv1d(1)


def test_tv_spectral_norm_p64():
    op = pen.build_tv1d(64)
    dense = np.linalg.norm(op.A.toarray(), 2)
    assert 2 * np.sin(63 * np.pi / 128) - 1e-6 <= op.spectral_norm <= 2
    assert op.spectral_norm >= dense - 1e-6


@given(seed=st.integers(0, 2 ** 31), p=st.integers(2, 40))
def test_cached_norm_bounds_true_norm(seed, p):
    op = _random_op(np.random.default_rng(seed), p)
    true = np.linalg.norm(op.A.toarray(), 2)
    assert op.spectral_norm >= true - 1e-6
    assert op.spectral_norm <= true * (1 + 1e-6) + 1e-12


def test_power_iteration_matches_svd(rng):
    A = sparse.csr_matrix(rng.standard_normal((30, 20)))
    est = pen.power_iteration_norm(A)
    true = np.linalg.norm(A.toarray(), 2)
    assert true - 1e-6 <= est <= true * (1 + 2e-6)


def test_power_iteration_reports_bound():
    # Close top singular values: one iteration cannot meet the tolerance.
    A = sparse.csr_matrix(np.diag([1.0, 0.999, 0.5]))
    with pytest.raises(pen.PowerIterationError) as exc:
        pen.power_iteration_norm(A, max_iter=1)
    assert exc.value.bound > 0


def test_from_matrix_default_groups(rng):
    A = rng.standard_normal((4, 3))
    op = pen.from_matrix(A)
    assert op.n_groups == 4
    w = rng.standard_normal(3)
    assert pen.exact_value(op, w) == pytest.approx(np.abs(A @ w).sum())


def test_operator_rejects_bad_partition():
    A = sparse.csr_matrix(np.eye(3))
    with pytest.raises(ValueError):
        pen.LinearOperator(A, np.array([0, 2]), np.array([1, 3]), 1.0)


# -- alpha* and smoothing ---------------------------------------------------

def test_alpha_star_origin():
    op = pen.build_tv1d(5)
    np.testing.assert_array_equal(pen.alpha_star(op, np.zeros(5), 0.1), 0)


def test_alpha_star_saturates(rng):
    op = pen.build_group_l12([[0, 1, 2], [2, 3], [4, 5]], 6)
    w = rng.standard_normal(6) * 10
    a = pen.alpha_star(op, w, 1e-6)
    norms = [np.linalg.norm(a[s:e]) for s, e in op.groups]
    np.testing.assert_allclose(norms, 1.0, atol=1e-12)


def test_alpha_star_tv_interior():
    op = pen.build_tv1d(3)
    w = np.array([0.0, 1e-4, 0.0])
    a = pen.alpha_star(op, w, 5e-4)
    np.testing.assert_allclose(a, [0.2, -0.2], rtol=1e-12)
    np.testing.assert_allclose(a, op.A @ w / 5e-4, rtol=1e-12)


def test_smoothed_value_origin():
    op = pen.build_group_l12([[0, 1], [1, 2]], 3)
    assert pen.smoothed_value(op, np.zeros(3), 0.3) == 0.0


def test_smoothed_value_saturated_is_shifted(rng):
    op = pen.build_tv1d(6)
    w = np.cumsum(np.abs(rng.standard_normal(6)) + 1.0)
    mu = 1e-3
    assert pen.smoothed_value(op, w, mu) == pytest.approx(
        pen.exact_value(op, w) - mu * op.n_groups / 2, rel=1e-14)


def test_smoothed_value_limit(rng):
    op = pen.build_group_l12(default_groups(100), 100)
    w = rng.standard_normal(100)
    omega = pen.exact_value(op, w)
    gaps = []
    for mu in [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6]:
        v = pen.smoothed_value(op, w, mu)
        assert omega - mu * op.n_groups / 2 - 1e-12 <= v <= omega + 1e-12
        gaps.append(omega - v)
    assert all(a >= b for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] <= 1e-6 * op.n_groups


def test_smoothed_gradient_origin():
    op = pen.build_tv1d(4)
    np.testing.assert_array_equal(pen.smoothed_gradient(op, np.zeros(4), 1),
                                  0)


def test_smoothed_gradient_fd(rng):
    for _ in range(10):
        op = _random_op(rng, 9)
        w = rng.standard_normal(9)
        mu = 0.05
        g = pen.smoothed_gradient(op, w, mu)
        assert rel_err(g, fd_grad(lambda v: pen.smoothed_value(op, v, mu),
                                  w)) < 1e-5


def test_smoothed_gradient_single_group_far(rng):
    w = rng.standard_normal(5) * 3
    op = pen.build_group_l12([list(range(5))], 5)
    np.testing.assert_allclose(pen.smoothed_gradient(op, w, 1e-4),
                               w / np.linalg.norm(w), rtol=1e-12)


def test_lipschitz_examples():
    ident = pen.build_group_l12([[0, 1, 2]], 3)
    assert pen.lipschitz(ident, 1.0) == pytest.approx(1.0)
    tv4 = pen.build_tv1d(4)
    assert tv4.spectral_norm == pytest.approx(2 * np.sin(3 * np.pi / 8),
                                              rel=1e-12)
    assert pen.lipschitz(tv4, 5e-4) == pytest.approx(
        (2 * np.sin(3 * np.pi / 8)) ** 2 / 5e-4, rel=1e-12)
    g = [[0, 1], [1, 2, 3]]
    base = pen.lipschitz(pen.build_group_l12(g, 4), 0.1)
    scaled = pen.lipschitz(pen.build_group_l12(g, 4, [3.0, 3.0]), 0.1)
    assert scaled == pytest.approx(9 * base, rel=1e-12)
    with pytest.raises(ValueError):
        pen.lipschitz(tv4, 0.0)


# -- properties ---------------------------------------------------------------

@given(seed=st.integers(0, 2 ** 31), p=st.integers(2, 30),
       logmu=st.floats(-8, 1), scale=st.floats(1e-4, 10))
def test_duality_gap_and_alpha_feasibility(seed, p, logmu, scale):
    r = np.random.default_rng(seed)
    op = _random_op(r, p)
    w = r.standard_normal(p) * scale
    mu = 10.0 ** logmu
    gap = pen.exact_value(op, w) - pen.smoothed_value(op, w, mu)
    assert -1e-12 * max(1, pen.exact_value(op, w)) <= gap
    assert gap <= mu * op.n_groups / 2 * (1 + 1e-12) + 1e-12
    a = pen.alpha_star(op, w, mu)
    for s, e in op.groups:
        assert np.linalg.norm(a[s:e]) <= 1 + 1e-12


def test_gradient_lipschitz_empirical():
    r = np.random.default_rng(7)
    for _ in range(1000):
        p = int(r.integers(2, 20))
        op = _random_op(r, p)
        mu = 10.0 ** r.uniform(-4, 0)
        w1 = r.standard_normal(p) * r.uniform(1e-4, 1)
        w2 = w1 + r.standard_normal(p) * r.uniform(1e-5, 1)
        lhs = np.linalg.norm(pen.smoothed_gradient(op, w1, mu)
                             - pen.smoothed_gradient(op, w2, mu))
        rhs = pen.lipschitz(op, mu) * np.linalg.norm(w1 - w2)
        assert lhs <= rhs * (1 + 1e-10) + 1e-12


@given(seed=st.integers(0, 2 ** 31), p=st.integers(2, 30))
def test_tiny_mu_recovers_exact_value(seed, p):
    r = np.random.default_rng(seed)
    op = _random_op(r, p)
    w = r.standard_normal(p)
    assert abs(pen.smoothed_value(op, w, 1e-8)
               - pen.exact_value(op, w)) <= 1e-8 * op.n_groups


# -- group files --------------------------------------------------------------

def test_group_file_round_trip(tmp_path):
    path = tmp_path / "g.txt"
    pen.write_groups(path, [[0, 1, 2], [2, 3]], [1.0, 2.5])
    groups, weights = pen.read_groups(path, 4)
    assert groups == [[0, 1, 2], [2, 3]]
    assert weights == [1.0, 2.5]


def test_group_file_errors(tmp_path):
    path = tmp_path / "g.txt"
    path.write_text("# comment\n0,1\n1,x\n")
    with pytest.raises(ValueError, match=":3"):
        pen.read_groups(path, 4)
    path.write_text("0,9\n")
    with pytest.raises(ValueError):
        pen.read_groups(path, 4)
    path.write_text("0,1;colour=2\n")
    with pytest.raises(ValueError):
        pen.read_groups(path, 4)
    path.write_text("\n# nothing\n")
    with pytest.raises(ValueError):
        pen.read_groups(path, 4)
