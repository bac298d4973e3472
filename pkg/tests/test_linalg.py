import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from quasidd import linalg
from quasidd.linalg import (
    ConvergenceFailure, RankDeficient, SingularMatrix, as_csr, dense_eig,
    hessenberg_eigenvalues, least_squares_solve, sparse_lu_factor, sparse_matvec,
)


def random_sparse(rng, n, density=0.2, diag_boost=0.0):
    A = sp.random(n, n, density=density, random_state=rng, dtype=complex, data_rvs=lambda k: rng.standard_normal(k)
                  + 1j * rng.standard_normal(k))
    return as_csr(A + diag_boost * sp.identity(n))


def multiset_close(a, b, tol):
    a, b = list(np.asarray(a)), list(np.asarray(b))
    if len(a) != len(b):
        return False
    for x in a:
        j = int(np.argmin([abs(x - y) for y in b]))
        if abs(x - b[j]) > tol:
            return False
        b.pop(j)
    return True


def test_matvec_identity():
    x = np.array([1, 1j, -2])
    np.testing.assert_array_equal(sparse_matvec(as_csr(np.eye(3)), x), x)


def test_matvec_permutation():
    x = np.array([2.0 + 1j, -5.0])
    np.testing.assert_array_equal(sparse_matvec(as_csr([[0, 1], [1, 0]]), x), x[::-1])


def test_matvec_dimension_mismatch():
    with pytest.raises(ValueError):
        sparse_matvec(as_csr(np.eye(3)), np.ones(2))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 50), seed=st.integers(0, 2**31 - 1))
def test_matvec_matches_dense(n, seed):
    rng = np.random.default_rng(seed)
    A = random_sparse(rng, n, 0.3)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    ref = A.toarray() @ x
    scale = max(np.abs(A.toarray()).sum(axis=1).max() * np.abs(x).max(), 1e-300)
    assert np.abs(sparse_matvec(A, x) - ref).max() <= 1e-13 * scale


def test_csr_invariants():
    A = as_csr(sp.coo_matrix(([1.0, 2.0, 3.0], ([0, 0, 1], [1, 1, 0])), shape=(2, 2)))
    linalg.check_csr(A)  # duplicates summed by as_csr
    assert A[0, 1] == 3.0


def test_lu_diagonal():
    f = sparse_lu_factor(as_csr(np.diag([2, 3j])))
    np.testing.assert_allclose(f.solve(np.array([2, 3j])), [1, 1])


def test_lu_needs_pivoting():
    f = sparse_lu_factor(as_csr([[0, 1], [1, 0]]))
    np.testing.assert_allclose(f.solve(np.array([1.0, 2.0])), [2, 1])


def test_lu_singular():
    with pytest.raises(SingularMatrix):
        sparse_lu_factor(as_csr([[1, 1], [1, 1]]))


def test_lu_random_residual():
    rng = np.random.default_rng(1)
    A = random_sparse(rng, 50, 0.1)
    A = as_csr(A + sp.diags(np.abs(A).sum(axis=1).A1 + 1))
    b = rng.standard_normal(50) + 1j * rng.standard_normal(50)
    x = sparse_lu_factor(A).solve(b)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 40), seed=st.integers(0, 2**31 - 1))
def test_lu_recovers_solution(n, seed):
    rng = np.random.default_rng(seed)
    A = random_sparse(rng, n, 0.2, diag_boost=n)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    y = sparse_lu_factor(A).solve(A @ x)
    assert np.linalg.norm(y - x) <= 1e-9 * np.linalg.norm(x)


def test_hessenberg_triangular():
    H = np.triu(np.arange(1, 17).reshape(4, 4)).astype(complex)
    assert multiset_close(hessenberg_eigenvalues(H), np.diag(H), 1e-12)


def test_hessenberg_swap():
    assert multiset_close(hessenberg_eigenvalues(np.array([[0, 1], [1, 0]])), [1, -1], 1e-12)


def test_hessenberg_companion_roots_of_unity():
    C = np.array([[0, 0, 1], [1, 0, 0], [0, 1, 0]], dtype=complex)  # companion of z^3 - 1
    roots = np.exp(2j * np.pi * np.arange(3) / 3)
    assert multiset_close(hessenberg_eigenvalues(C), roots, 1e-10)


def test_hessenberg_rejects_full():
    with pytest.raises(ValueError):
        hessenberg_eigenvalues(np.ones((3, 3)))


def test_hessenberg_nonfinite():
    H = np.triu(np.ones((3, 3)))
    H[0, 0] = np.nan
    with pytest.raises(ConvergenceFailure):
        hessenberg_eigenvalues(H)


def test_hessenberg_eigenvalues_have_null_vectors():
    rng = np.random.default_rng(3)
    H = np.triu(rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12)), -1)
    for lam in hessenberg_eigenvalues(H):
        s = np.linalg.svd(H - lam * np.eye(12), compute_uv=False)
        assert s[-1] <= 1e-8 * np.linalg.norm(H, 2)


def test_dense_eig_normal_diag():
    d = dense_eig(np.diag([1.0, 2.0]))
    np.testing.assert_allclose(np.sort(d.eigenvalues.real), [1, 2])
    np.testing.assert_allclose(d.kappa, 1, atol=1e-12)
    np.testing.assert_allclose(np.abs(d.right_vectors), np.eye(2), atol=1e-12)


def test_dense_eig_nonnormal_kappa():
    A = np.array([[1, 100], [0, 1.001]])
    d = dense_eig(A)
    # closed form: v1 = e1, v2 = (100, 0.001) normalized, left vectors from V^{-1};
    # kappa = 1/|cos angle(v1, v2)| = ||(100, 0.001)|| / 0.001
    expected = np.hypot(100, 0.001) / 0.001
    np.testing.assert_allclose(d.kappa, expected, rtol=1e-6)
    assert np.all(d.kappa >= 100)


def test_dense_eig_random_consistency():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((20, 20)) + 1j * rng.standard_normal((20, 20))
    d = dense_eig(A)
    V, W = d.right_vectors, d.left_vectors
    nrm = np.linalg.norm(A, 2)
    assert np.linalg.norm(A @ V - V * d.eigenvalues) <= 1e-8 * nrm
    np.testing.assert_allclose(W.conj().T @ V, np.eye(20), atol=1e-8)
    assert np.all(d.kappa >= 1 - 1e-12)


def test_dense_eig_defective_flagged():
    with pytest.warns(UserWarning):
        d = dense_eig(np.array([[1.0, 1.0], [0.0, 1.0]]))
    assert not d.well_conditioned


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 12), seed=st.integers(0, 2**31 - 1))
def test_eigenvalues_permutation_invariant(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    P = np.eye(n)[rng.permutation(n)]
    assert multiset_close(dense_eig(A).eigenvalues, dense_eig(P @ A @ P.T).eigenvalues, 1e-8 * np.linalg.norm(A, 2))


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 12), seed=st.integers(0, 2**31 - 1))
def test_normal_matrix_kappa_is_one(n, seed):
    rng = np.random.default_rng(seed)
    U, _ = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    lam = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    d = dense_eig(U @ np.diag(lam) @ U.conj().T)
    np.testing.assert_allclose(d.kappa, 1, atol=1e-10)


def test_least_squares_square():
    M = np.array([[2, 1], [1, 3j]])
    b = np.array([1, 2j])
    np.testing.assert_allclose(M @ least_squares_solve(M, b), b, atol=1e-14)


def test_least_squares_mean():
    np.testing.assert_allclose(least_squares_solve(np.array([[1.0], [1.0]]), np.array([0.0, 2.0])), [1.0])


def test_least_squares_residual_orthogonal():
    rng = np.random.default_rng(11)
    M = rng.standard_normal((10, 4)) + 1j * rng.standard_normal((10, 4))
    b = rng.standard_normal(10) + 1j * rng.standard_normal(10)
    r = b - M @ least_squares_solve(M, b)
    assert np.abs(M.conj().T @ r).max() <= 1e-12 * np.linalg.norm(M) * np.linalg.norm(b)


def test_least_squares_rank_deficient():
    with pytest.raises(RankDeficient):
        least_squares_solve(np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]), np.ones(3))


def test_matrix_market_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    A = random_sparse(rng, 8, 0.3, diag_boost=1.0)
    linalg.write_matrix_market(tmp_path / "a.mtx", A)
    B = linalg.read_matrix_market(tmp_path / "a.mtx")
    assert (A != B).nnz == 0
    text = (tmp_path / "a.mtx").read_text()
    assert text.startswith("%%MatrixMarket matrix coordinate complex general")
    z = rng.standard_normal((5, 2)) + 1j * rng.standard_normal((5, 2))
    linalg.write_matrix_market(tmp_path / "z.mtx", z)
    np.testing.assert_array_equal(linalg.read_matrix_market(tmp_path / "z.mtx"), z)
