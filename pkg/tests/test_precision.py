import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from adaptive_car.graph import build_area_graph, build_edge_set, build_lattice
from adaptive_car.precision import (
    NotPositiveDefiniteError,
    PatternMismatchError,
    SparseSymMatrix,
    analyse,
    build_adaptive_Q,
    build_ar1_Z,
    build_leroux_Q,
    factorize,
    log_det,
    phi_log_density,
    refactorize_after_edge_change,
    st_quad_form,
    write_matrix_market,
)

from conftest import (dense_adaptive_Q, dense_adjacency, dense_logdet, dense_phi_logpdf,
                      dense_Z, random_connected_graph)

PATH3 = build_area_graph([(0, 1), (1, 2)], 3)


def _spd(m):
    return SparseSymMatrix.from_scipy(sparse.csr_matrix(m))


# -- construction ---------------------------------------------------------

def test_adaptive_Q_path_near_unit_weights():
    w = np.full(2, 1.0 - 1e-12)
    q = build_adaptive_Q(PATH3, w, eps=0.1).to_dense()
    np.testing.assert_allclose(np.diag(q), [1.1, 2.1, 1.1], atol=1e-11)
    np.testing.assert_allclose([q[0, 1], q[1, 2]], -1.0, atol=1e-11)
    assert q[0, 2] == 0.0


def test_adaptive_Q_vanishing_weights_tend_to_ridge():
    g = build_lattice(3, 3)
    q = build_adaptive_Q(g, np.full(12, 1e-300), eps=0.3).to_dense()
    np.testing.assert_allclose(q, 0.3 * np.eye(9), atol=1e-299)


def test_adaptive_Q_lattice_row_sums_equal_eps():
    g = build_lattice(2, 2)
    w = np.array([1.0 - 1e-16, 0.5, 0.5, 1.0 - 1e-16])
    q = build_adaptive_Q(g, w, eps=1e-7).to_dense()
    np.testing.assert_allclose(q.sum(axis=1), 1e-7, atol=1e-12 * 2)
    np.testing.assert_allclose(q, dense_adaptive_Q(g, w, 1e-7), atol=0)


@pytest.mark.parametrize("w, eps", [([0.5, 1.0], 1e-7), ([0.0, 0.5], 1e-7),
                                    ([0.5, 0.5, 0.5], 1e-7), ([0.5, 0.5], 0.0)])
def test_adaptive_Q_rejects(w, eps):
    with pytest.raises(ValueError):
        build_adaptive_Q(PATH3, np.array(w), eps)


def test_leroux_examples():
    np.testing.assert_array_equal(build_leroux_Q(PATH3, 0.0).to_dense(), np.eye(3))
    np.testing.assert_array_equal(build_leroux_Q(PATH3, 1.0).to_dense(),
                                  [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    two = build_area_graph([(0, 1)], 2)
    np.testing.assert_array_equal(build_leroux_Q(two, 0.5).to_dense(), [[1, -0.5], [-0.5, 1]])
    with pytest.raises(ValueError):
        build_leroux_Q(PATH3, 1.2)


def test_ar1_examples():
    np.testing.assert_array_equal(build_ar1_Z(0.0, 4).to_dense(), np.eye(4))
    np.testing.assert_array_equal(build_ar1_Z(0.3, 1).to_dense(), [[1.0]])
    np.testing.assert_array_equal(build_ar1_Z(0.5, 3).to_dense(),
                                  [[1.25, -0.5, 0], [-0.5, 1.25, -0.5], [0, -0.5, 1]])
    for bad in (-0.1, 1.0):
        with pytest.raises(ValueError):
            build_ar1_Z(bad, 3)


def test_ar1_matches_innovation_expansion(rng):
    """Z(alpha) collects the coefficients of phi_1^2 + sum (phi_j - alpha phi_{j-1})^2."""
    for T in (1, 2, 5, 9):
        a = rng.uniform(0, 1)
        D = np.eye(T) - a * np.eye(T, k=-1)
        np.testing.assert_allclose(build_ar1_Z(a, T).to_dense(), D.T @ D, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 0.999), st.integers(1, 50))
def test_ar1_determinant_is_one(alpha, T):
    Z = build_ar1_Z(alpha, T)
    assert abs(np.linalg.det(Z.to_dense()) - 1.0) < 1e-12
    assert Z.log_det == 0.0


def test_matrix_market_dump(tmp_path):
    from scipy.io import mmread
    q = build_adaptive_Q(PATH3, [0.3, 0.6])
    write_matrix_market(q, tmp_path / "q.mtx", comment="test")
    back = mmread(str(tmp_path / "q.mtx")).toarray()
    np.testing.assert_array_equal(back, q.to_dense())


# -- factorization --------------------------------------------------------

def test_factor_identity_and_diagonal():
    f = factorize(_spd(np.eye(4)))
    np.testing.assert_array_equal(f.L().toarray(), np.eye(4))
    assert log_det(f) == 0.0
    f = factorize(_spd(np.diag([4.0, 9.0])))
    np.testing.assert_array_equal(np.sort(f.diag()), [2.0, 3.0])
    assert log_det(f) == pytest.approx(math.log(36.0), abs=1e-15)


def test_not_positive_definite_reports_pivot():
    with pytest.raises(NotPositiveDefiniteError) as info:
        factorize(_spd(np.array([[1.0, 2.0], [2.0, 1.0]])))
    assert info.value.pivot in (0, 1)
    with pytest.raises(NotPositiveDefiniteError):
        factorize(build_leroux_Q(PATH3, 1.0))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 50), st.integers(0, 2 ** 32 - 1))
def test_factor_reconstructs_and_logdet(n, seed):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(rng, n, 0.5)
    w = rng.uniform(0.01, 0.99, build_edge_set(g).count)
    q = build_adaptive_Q(g, w, eps=rng.choice([1e-7, 1e-3, 0.5]))
    f = factorize(q)
    A = q.to_dense()
    P = np.eye(n)[f.perm]
    L = f.L().toarray()
    assert np.max(np.abs(P @ A @ P.T - L @ L.T)) <= 1e-10 * np.max(np.abs(A))
    assert np.all(f.diag() > 0)
    ref = dense_logdet(A)
    assert abs(f.log_det() - ref) <= 1e-8 * max(1.0, abs(ref))
    b = rng.standard_normal(n)
    np.testing.assert_allclose(A @ f.solve(b), b, atol=1e-6 * np.linalg.cond(A) * 1e-8 + 1e-8)


def test_solve_lt_gives_precision_covariance(rng):
    q = build_adaptive_Q(PATH3, [0.4, 0.7], eps=0.2)
    f = factorize(q)
    # x = P^T L^{-T} z has covariance Q^{-1}
    cols = np.column_stack([f.solve_lt(e) for e in np.eye(3)])
    np.testing.assert_allclose(cols @ cols.T, np.linalg.inv(q.to_dense()), rtol=1e-12)


def test_symbolic_reuse_across_values(rng):
    g = build_lattice(5, 5)
    sym = analyse(build_adaptive_Q(g, np.full(40, 0.5)))
    for _ in range(5):
        q = build_adaptive_Q(g, rng.uniform(0.05, 0.95, 40))
        f = factorize(q, sym)
        assert f.log_det() == pytest.approx(dense_logdet(q.to_dense()), rel=1e-8)


# -- partial refactorization -----------------------------------------------

def test_refactorize_zero_changes_is_identity():
    q = build_adaptive_Q(PATH3, [0.3, 0.6])
    f = factorize(q)
    assert refactorize_after_edge_change(f, q, []) is f


def test_refactorize_single_edge_path():
    g = build_area_graph([(k, k + 1) for k in range(7)], 8)
    w = np.full(7, 0.5)
    q = build_adaptive_Q(g, w)
    f = factorize(q)
    w2 = w.copy()
    w2[3] = 0.01
    q2 = q.with_edge_weights(w2, [3])
    part = refactorize_after_edge_change(f, q2, [3])
    full = factorize(q2, f.symbolic)
    np.testing.assert_allclose(part.Lx, full.Lx, atol=1e-10, rtol=0)


def test_with_edge_weights_matches_fresh_build(rng):
    g = build_lattice(6, 6)
    w = rng.uniform(0.1, 0.9, 60)
    q = build_adaptive_Q(g, w)
    idx = rng.choice(60, 10, replace=False)
    w2 = w.copy()
    w2[idx] = rng.uniform(0.1, 0.9, 10)
    np.testing.assert_array_equal(q.with_edge_weights(w2, idx).data, build_adaptive_Q(g, w2).data)


def test_refactorize_rejects_pattern_change():
    g = build_lattice(3, 3)
    f = factorize(build_adaptive_Q(g, np.full(12, 0.5)))
    other = build_adaptive_Q(build_lattice(3, 3), np.full(12, 0.5))
    other_pattern = SparseSymMatrix.from_scipy(sparse.csr_matrix(np.eye(9)))
    with pytest.raises(PatternMismatchError):
        refactorize_after_edge_change(f, other_pattern, [0], edges=build_edge_set(g))
    refactorize_after_edge_change(f, other, [0])  # same pattern is fine


@pytest.mark.benchmark
def test_partial_refactorization_speed_benchmark():
    """Soft benchmark: report the speedup on a 20x20 lattice with a 10-edge block."""
    g = build_lattice(20, 20)
    m = build_edge_set(g).count
    rng = np.random.default_rng(3)
    w = rng.uniform(0.1, 0.9, m)
    q = build_adaptive_Q(g, w)
    f = factorize(q)
    idx = np.arange(m - 10, m)
    w2 = w.copy()
    w2[idx] = 0.5
    q2 = q.with_edge_weights(w2, idx)
    for _ in range(3):
        refactorize_after_edge_change(f, q2, idx)
        factorize(q2, f.symbolic)
    reps = 300
    t0 = time.perf_counter()
    for _ in range(reps):
        refactorize_after_edge_change(f, q2, idx)
    t1 = time.perf_counter()
    for _ in range(reps):
        factorize(q2, f.symbolic)
    t2 = time.perf_counter()
    speedup = (t2 - t1) / (t1 - t0)
    print(f"partial refactorization speedup: {speedup:.2f}x")
    assert speedup > 1.0


# -- Kronecker forms ----------------------------------------------------------

def test_quad_form_trivial_cases(rng):
    q = build_adaptive_Q(PATH3, [0.3, 0.6], eps=0.1)
    Z = build_ar1_Z(0.4, 3)
    assert st_quad_form(np.zeros((3, 3)), Z, q) == 0.0
    x = rng.standard_normal((3, 1))
    assert st_quad_form(x, build_ar1_Z(0.4, 1), q) == pytest.approx(
        float(x[:, 0] @ q.to_dense() @ x[:, 0]), rel=1e-14)
    with pytest.raises(ValueError):
        st_quad_form(np.zeros((4, 3)), Z, q)


def test_quad_form_dense_kronecker_n6_t4(rng):
    g = random_connected_graph(rng, 6)
    w = rng.uniform(0.05, 0.95, build_edge_set(g).count)
    q = build_adaptive_Q(g, w, 1e-7)
    phi = rng.standard_normal((6, 4))
    x = phi.T.ravel()
    ref = x @ np.kron(dense_Z(0.7, 4), dense_adaptive_Q(g, w, 1e-7)) @ x
    assert st_quad_form(phi, build_ar1_Z(0.7, 4), q) == pytest.approx(ref, rel=1e-10)
    # flat time-major input is accepted as well
    assert st_quad_form(x, build_ar1_Z(0.7, 4), q) == pytest.approx(ref, rel=1e-10)


def test_phi_log_density_standard_normal():
    f = factorize(_spd(np.eye(1)))
    val = phi_log_density(np.zeros((1, 1)), 1.0, build_ar1_Z(0.0, 1), f)
    assert val == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    with pytest.raises(ValueError):
        phi_log_density(np.zeros((1, 1)), 0.0, build_ar1_Z(0.0, 1), f)


def test_phi_log_density_matches_dense_mvn(rng):
    g = random_connected_graph(rng, 5)
    w = rng.uniform(0.05, 0.95, build_edge_set(g).count)
    q = build_adaptive_Q(g, w, 0.01)
    f = factorize(q)
    phi = rng.standard_normal((5, 3))
    Z = build_ar1_Z(0.6, 3)
    ref = dense_phi_logpdf(phi, 0.8, dense_Z(0.6, 3), dense_adaptive_Q(g, w, 0.01))
    assert phi_log_density(phi, 0.8, Z, f) == pytest.approx(ref, rel=1e-8)


def test_phi_log_density_tau2_doubling(rng):
    q = build_adaptive_Q(PATH3, [0.3, 0.8], eps=0.05)
    f = factorize(q)
    Z = build_ar1_Z(0.2, 2)
    phi = rng.standard_normal((3, 2))
    tau2 = 0.7
    quad = st_quad_form(phi, Z, q)
    diff = phi_log_density(phi, 2 * tau2, Z, f) - phi_log_density(phi, tau2, Z, f)
    expected = -3.0 * math.log(2) + quad / (2 * tau2) - quad / (4 * tau2)
    assert diff == pytest.approx(expected, rel=1e-12)
    dense_diff = (dense_phi_logpdf(phi, 2 * tau2, dense_Z(0.2, 2), q.to_dense())
                  - dense_phi_logpdf(phi, tau2, dense_Z(0.2, 2), q.to_dense()))
    assert diff == pytest.approx(dense_diff, rel=1e-8)
