import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from pteit.errors import RankDeficient, SingularMatrix
from pteit.numerics import (as_sparse_sym, factorize, read_matrix_bin, solve_normal_equations, svd,
                            write_matrix_bin)


def random_spd(rng, n):
    X = rng.standard_normal((n, n))
    return X @ X.T + n * np.eye(n)


def test_identity_solve():
    x = factorize(sp.identity(3)).solve(np.array([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(x, [1.0, 2.0, 3.0])


def test_diagonal_solve():
    x = factorize(sp.diags([2.0, 4.0])).solve(np.array([2.0, 4.0]))
    np.testing.assert_allclose(x, [1.0, 1.0], rtol=0, atol=1e-15)


def test_random_spd_multiply_back(rng):
    A = random_spd(rng, 10)
    b = rng.standard_normal(10)
    x = factorize(A).solve(b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_factorization_reused_for_many_rhs(rng):
    A = random_spd(rng, 8)
    fac = factorize(A)
    B = rng.standard_normal((8, 5))
    X = fac.solve(B)
    np.testing.assert_allclose(A @ X, B, atol=1e-10)
    assert fac.n_solves == 5


def test_singular_matrix_raises():
    A = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(SingularMatrix):
        factorize(A)


def test_asymmetric_rejected():
    with pytest.raises(ValueError):
        as_sparse_sym(np.array([[1.0, 2.0], [0.0, 1.0]]))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_solve_residual_property(n, seed):
    rng = np.random.default_rng(seed)
    A = random_spd(rng, n)
    b = rng.standard_normal(n)
    fac = factorize(A)
    assert fac.residual(fac.solve(b), b) <= 1e-10


def test_svd_diag():
    _, s, _ = svd(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(s, [3.0, 1.0])


def test_svd_rank_one():
    u, v = np.array([1.0, 2.0, 2.0]), np.array([3.0, 4.0])
    _, s, _ = svd(np.outer(u, v))
    np.testing.assert_allclose(s, [15.0, 0.0], atol=1e-12)


def test_svd_reconstruction(rng):
    A = rng.standard_normal((20, 5))
    U, s, V = svd(A)
    assert np.linalg.norm(U @ np.diag(s) @ V.T - A) <= 1e-10 * np.linalg.norm(A)
    assert np.all(np.diff(s) <= 0) and np.all(s >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_svd_permutation_invariance(m, n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    P = A[rng.permutation(m)][:, rng.permutation(n)]
    np.testing.assert_allclose(np.sort(svd(A)[1]), np.sort(svd(P)[1]), atol=1e-10)


def test_svd_rejects_nonfinite():
    with pytest.raises(ValueError):
        svd(np.array([[np.nan, 1.0]]))


def test_normal_equations_square(rng):
    A = random_spd(rng, 4)
    x = rng.standard_normal(4)
    np.testing.assert_allclose(solve_normal_equations(A, A @ x), x, rtol=1e-10)


def test_normal_equations_consistent_overdetermined(rng):
    A = rng.standard_normal((7, 3))
    x = rng.standard_normal(3)
    np.testing.assert_allclose(solve_normal_equations(A, A @ x), x, rtol=1e-10)
    np.testing.assert_allclose(solve_normal_equations(sp.csc_matrix(A), A @ x), x, rtol=1e-10)


def test_normal_equations_residual_orthogonal():
    A = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    b = np.array([1.0, 2.0, 4.0])
    r = b - A @ solve_normal_equations(A, b)
    assert np.linalg.norm(A.T @ r) <= 1e-10
    assert np.linalg.norm(r) > 0.1


def test_normal_equations_rank_deficient():
    A = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    with pytest.raises(RankDeficient):
        solve_normal_equations(A, np.ones(3))


def test_binary_roundtrip(tmp_path, rng):
    M = rng.standard_normal((3, 5))
    path = tmp_path / "m.bin"
    write_matrix_bin(path, M)
    raw = path.read_bytes()
    assert raw[:4] == b"EITM"
    assert int.from_bytes(raw[4:8], "little") == 3 and int.from_bytes(raw[8:12], "little") == 5
    assert len(raw) == 16 + 8 * 15
    np.testing.assert_array_equal(read_matrix_bin(path), M)
