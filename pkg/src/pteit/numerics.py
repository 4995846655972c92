"""Linear-algebra substrate: sparse symmetric factorization, SVD, least squares.

Sparse matrices are plain ``scipy.sparse`` CSC matrices; dense matrices are
numpy arrays. The helpers here only add the contracts (symmetry checks,
singularity detection, error types) the rest of the package relies on.
"""

import struct
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NoConvergence, RankDeficient, SingularMatrix

SOLVE_RTOL = 1e-10
SYMMETRY_RTOL = 1e-12

_BIN_MAGIC = b"EITM"


def as_sparse_sym(A, check=True):
    """Return ``A`` as a CSC matrix, verifying symmetry to 1e-12 relative."""
    A = sp.csc_matrix(A, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got {A.shape}")
    if check:
        asym = abs(A - A.T).max() if A.nnz else 0.0
        scale = abs(A).max() if A.nnz else 0.0
        if asym > SYMMETRY_RTOL * max(scale, 1e-300):
            raise ValueError(f"matrix not symmetric (max |A - A^T| = {asym:.3e})")
    return A


class Factorization:
    """Reusable sparse LU factorization of a symmetric matrix.

    The handle is never mutated after construction, so concurrent ``solve``
    calls against the same instance are safe.
    """

    def __init__(self, A):
        A = as_sparse_sym(A, check=False)
        self.n = A.shape[0]
        self._A = A
        try:
            self._lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise SingularMatrix(str(exc)) from exc
        diag_u = np.abs(self._lu.U.diagonal())
        if diag_u.size and (diag_u.min() <= 1e-14 * diag_u.max() or not np.all(np.isfinite(diag_u))):
            raise SingularMatrix("factorization pivot below rank-deficiency threshold")
        self.n_solves = 0

    def solve(self, b):
        """Solve ``A x = b`` for a vector or a matrix of right-hand sides."""
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"rhs has {b.shape[0]} rows, matrix has {self.n}")
        x = self._lu.solve(b)
        self.n_solves += 1 if b.ndim == 1 else b.shape[1]
        return x

    def residual(self, x, b):
        b = np.asarray(b, dtype=float)
        return np.linalg.norm(self._A @ x - b) / max(np.linalg.norm(b), 1e-300)


def factorize(A):
    return Factorization(A)


def svd(A):
    """Thin SVD ``A = U diag(s) V^T`` with ``s`` non-increasing.

    Returns ``(U, s, V)`` (note: ``V``, not ``V^T``).
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValueError("svd input has non-finite entries")
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    return U, s, Vt.T


def solve_normal_equations(A, b):
    """Least-squares solution of a tall full-column-rank system via ``A^T A x = A^T b``.

    ``A`` may be dense or sparse; ``b`` a vector or a matrix of right-hand sides.
    """
    b = np.asarray(b, dtype=float)
    if sp.issparse(A):
        A = sp.csc_matrix(A, dtype=float)
        AtA = (A.T @ A).tocsc()
        rhs = A.T @ b
        try:
            fac = Factorization(AtA)
        except SingularMatrix as exc:
            raise RankDeficient(str(exc)) from exc
        return fac.solve(rhs)
    A = np.asarray(A, dtype=float)
    if A.shape[0] < A.shape[1]:
        raise RankDeficient(f"system is underdetermined: {A.shape}")
    AtA = A.T @ A
    try:
        cho = scipy.linalg.cho_factor(AtA)
    except np.linalg.LinAlgError as exc:
        raise RankDeficient(str(exc)) from exc
    d = np.abs(np.diag(cho[0]))
    if d.min() <= 1e-8 * d.max():
        raise RankDeficient("normal matrix is numerically rank deficient")
    return scipy.linalg.cho_solve(cho, A.T @ b)


def write_matrix_bin(path, M):
    """Dump a dense matrix as ``EITM`` + u32 rows + u32 cols + u32 reserved, then row-major f64 (LE)."""
    M = np.atleast_2d(np.asarray(M, dtype="<f8"))
    rows, cols = M.shape
    with open(path, "wb") as fh:
        fh.write(_BIN_MAGIC + struct.pack("<III", rows, cols, 0))
        fh.write(np.ascontiguousarray(M).tobytes(order="C"))


def read_matrix_bin(path):
    data = Path(path).read_bytes()
    if data[:4] != _BIN_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    rows, cols, _ = struct.unpack("<III", data[4:16])
    body = np.frombuffer(data, dtype="<f8", offset=16)
    if body.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, found {body.size}")
    return body.reshape(rows, cols).astype(float)
