"""Complex dense/sparse kernels shared by the rest of the package.

Sparse matrices are plain ``scipy.sparse.csr_matrix`` objects in canonical
form (sorted indices, no duplicates). Factorizations wrap SuperLU; dense
eigenproblems go through LAPACK.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

PIVOT_THRESHOLD = 1e-300
EIG_DEFECT_COND = 1e12


class LinAlgError(RuntimeError):
    pass


class SingularMatrix(LinAlgError):
    pass


class ConvergenceFailure(LinAlgError):
    pass


class RankDeficient(LinAlgError):
    pass


def as_csr(A) -> sp.csr_matrix:
    """Return ``A`` as a complex CSR matrix in canonical form."""
    A = sp.csr_matrix(A, dtype=complex)
    A.sum_duplicates()
    A.sort_indices()
    return A


def check_csr(A: sp.csr_matrix) -> None:
    if not isinstance(A, sp.csr_matrix):
        raise TypeError("expected a csr_matrix")
    nrows = A.shape[0]
    if len(A.indptr) != nrows + 1 or np.any(np.diff(A.indptr) < 0):
        raise ValueError("row offsets must be nondecreasing")
    if len(A.data) != A.indptr[-1]:
        raise ValueError("values length does not match row offsets")
    for i in range(nrows):
        cols = A.indices[A.indptr[i]:A.indptr[i + 1]]
        if np.any(np.diff(cols) <= 0):
            raise ValueError(f"row {i}: column indices not strictly increasing")
    if not np.all(np.isfinite(A.data)):
        raise ValueError("non-finite stored value")


def sparse_matvec(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} @ {x.shape}")
    return A @ x


@dataclass(frozen=True)
class SparseFactorization:
    """LU factors of a square sparse matrix (SuperLU, COLAMD ordering)."""

    lu: spla.SuperLU
    n: int

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=complex)
        if b.shape[0] != self.n:
            raise ValueError(f"rhs has {b.shape[0]} rows, expected {self.n}")
        return self.lu.solve(b)

    @property
    def perm_r(self) -> np.ndarray:
        return self.lu.perm_r

    @property
    def perm_c(self) -> np.ndarray:
        return self.lu.perm_c


def sparse_lu_factor(A) -> SparseFactorization:
    A = sp.csc_matrix(A, dtype=complex)
    n, m = A.shape
    if n != m:
        raise ValueError(f"matrix must be square, got {A.shape}")
    try:
        lu = spla.splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularMatrix(str(exc)) from exc
    diag = np.abs(lu.U.diagonal())
    if n and diag.min() < PIVOT_THRESHOLD:
        raise SingularMatrix(f"zero pivot ({diag.min():.3e})")
    return SparseFactorization(lu, n)


def _require_square(H: np.ndarray) -> np.ndarray:
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"square matrix required, got shape {H.shape}")
    return H


def hessenberg_eigenvalues(H: np.ndarray) -> np.ndarray:
    """All eigenvalues of an upper-Hessenberg matrix."""
    H = _require_square(H)
    n = H.shape[0]
    if n == 0:
        return np.zeros(0, dtype=complex)
    if np.any(np.tril(H, -2) != 0):
        raise ValueError("matrix is not upper Hessenberg")
    if not np.all(np.isfinite(H)):
        raise ConvergenceFailure("non-finite entries")
    try:
        # LAPACK zhseqr via the generic driver; no balancing so the
        # Hessenberg structure is used as is
        return scipy.linalg.eigvals(H, check_finite=False, overwrite_a=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray
    right_vectors: np.ndarray
    left_vectors: np.ndarray
    kappa: np.ndarray
    well_conditioned: bool = True

    def __len__(self) -> int:
        return len(self.eigenvalues)


def dense_eig(A: np.ndarray) -> EigenDecomposition:
    """Eigenvalues, right/left eigenvectors and eigenvalue condition numbers.

    Right vectors are unit-norm. Left vectors are the rows of ``V^{-1}``
    (conjugated), so ``left[:, i].conj() @ right[:, j] = delta_ij`` and
    ``kappa_i = ||left_i|| ||right_i||``.
    """
    A = _require_square(A)
    if not np.all(np.isfinite(A)):
        raise ValueError("non-finite matrix entries")
    try:
        lam, V = scipy.linalg.eig(A)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    V = V / np.linalg.norm(V, axis=0)
    ok = True
    condV = np.linalg.cond(V) if len(lam) else 1.0
    if not np.isfinite(condV) or condV > EIG_DEFECT_COND:
        ok = False
        warnings.warn(f"eigenvector matrix is nearly defective (cond={condV:.2e})")
    try:
        W = np.linalg.inv(V).conj().T
    except np.linalg.LinAlgError:
        W = np.full_like(V, np.nan)
        ok = False
    kappa = np.linalg.norm(W, axis=0) * np.linalg.norm(V, axis=0)
    return EigenDecomposition(lam, V, W, kappa, ok)


def least_squares_solve(M: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimize ``||M x - b||_2`` by Householder QR."""
    M = np.asarray(M, dtype=complex)
    b = np.asarray(b, dtype=complex)
    m, n = M.shape
    if m < n:
        raise ValueError("least squares needs nrows >= ncols")
    if b.shape[0] != m:
        raise ValueError("rhs length mismatch")
    Q, R = np.linalg.qr(M, mode="reduced")
    d = np.abs(np.diag(R))
    scale = np.linalg.norm(M, 2) if M.size else 0.0
    if n and d.min() < 1e-14 * scale:
        raise RankDeficient(f"|R_ii| = {d.min():.3e} relative to ||M|| = {scale:.3e}")
    return scipy.linalg.solve_triangular(R, Q.conj().T @ b)


def householder_rank(Z: np.ndarray, rtol: float = 1e-10) -> int:
    """Numerical column rank from the R factor of a pivoted QR."""
    if Z.shape[1] == 0:
        return 0
    R = scipy.linalg.qr(Z, mode="r", pivoting=True)[0]
    d = np.abs(np.diag(R))
    return int(np.sum(d > rtol * d[0])) if d[0] > 0 else 0


def write_matrix_market(path, A, comment: str = "") -> None:
    """Write a sparse (coordinate) or dense (array) complex matrix."""
    if sp.issparse(A):
        A = sp.coo_matrix(A, dtype=complex)
    else:
        A = np.asarray(A, dtype=complex)
        if A.ndim == 1:
            A = A[:, None]
    scipy.io.mmwrite(str(path), A, comment=comment, field="complex",
                     precision=17, symmetry="general")


def read_matrix_market(path):
    M = scipy.io.mmread(str(path))
    if sp.issparse(M):
        return as_csr(M)
    return np.asarray(M, dtype=complex)
