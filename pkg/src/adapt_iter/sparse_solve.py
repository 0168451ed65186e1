"""Direct sparse solver: reverse Cuthill-McKee ordering + banded LU.

The matrix is symmetrically permuted to a small bandwidth and factored with
LAPACK's banded LU (row partial pivoting).  At the problem sizes used here
(up to a few tens of thousands of unknowns on structured meshes) this is
fast enough and fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.sparse.csgraph import reverse_cuthill_mckee


class SingularMatrixError(ArithmeticError):
    """Exact zero pivot encountered; ``pivot`` is the index in the original numbering."""

    def __init__(self, pivot: int, message: str | None = None):
        self.pivot = pivot
        super().__init__(message or f"zero pivot at column {pivot}")


def as_csr(a) -> sp.csr_matrix:
    """Canonical CSR: sorted column indices, no duplicates."""
    A = sp.csr_matrix(a, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    return A


@dataclass(frozen=True, eq=False)
class LuFactor:
    n: int
    perm: np.ndarray  # symmetric permutation: row/col i of the banded system is perm[i]
    ab: np.ndarray  # LAPACK band storage of L and U
    ipiv: np.ndarray  # row interchanges within the banded system (0-based, as scipy returns them)
    kl: int
    ku: int
    row_scale: np.ndarray
    col_scale: np.ndarray

    def solve(self, b: np.ndarray) -> np.ndarray:
        return solve(self, b)

    def explicit_factors(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Dense (P, L, U) with P @ Ap = L @ U, Ap the scaled, permuted matrix (small n only)."""
        n, kl, ku = self.n, self.kl, self.ku
        U = np.zeros((n, n))
        kv = kl + ku
        for j in range(n):
            for i in range(max(0, j - kv), j + 1):
                U[i, j] = self.ab[kv + i - j, j]
        # L is stored column by column as multipliers with interchanges applied incrementally
        L = np.eye(n)
        perm = np.arange(n)
        mult = np.zeros((n, n))
        for j in range(n):
            p = int(self.ipiv[j])
            if p != j:
                perm[[j, p]] = perm[[p, j]]
                mult[[j, p], :j] = mult[[p, j], :j]
            for i in range(j + 1, min(n, j + kl + 1)):
                mult[i, j] = self.ab[kv + i - j, j]
        L += mult
        P = np.eye(n)[perm]
        return P, L, U


def factor(a, equilibrate: bool = False) -> LuFactor:
    """Factor a square sparse matrix with partial pivoting.

    ``equilibrate`` rescales rows then columns by their max magnitudes first,
    which helps the badly scaled saddle-point systems.
    """
    A = as_csr(a)
    n, m = A.shape
    if n != m:
        raise ValueError(f"matrix must be square, got {A.shape}")
    r = np.ones(n)
    c = np.ones(n)
    if equilibrate:
        rmax = abs(A).max(axis=1).toarray().ravel()
        if np.any(rmax == 0):
            raise SingularMatrixError(int(np.flatnonzero(rmax == 0)[0]), "structurally zero row")
        r = 1.0 / rmax
        A = as_csr(sp.diags(r) @ A)
        cmax = abs(A).max(axis=0).toarray().ravel()
        if np.any(cmax == 0):
            raise SingularMatrixError(int(np.flatnonzero(cmax == 0)[0]), "structurally zero column")
        c = 1.0 / cmax
        A = as_csr(A @ sp.diags(c))
    pattern = as_csr(abs(A) + abs(A).T)
    perm = reverse_cuthill_mckee(pattern, symmetric_mode=True).astype(np.int64)
    Ap = A[perm][:, perm].tocoo()
    offs = Ap.col - Ap.row
    kl = int(max(0, -offs.min())) if Ap.nnz else 0
    ku = int(max(0, offs.max())) if Ap.nnz else 0
    ab = np.zeros((2 * kl + ku + 1, n), order="F")
    ab[kl + ku + Ap.row - Ap.col, Ap.col] = Ap.data
    lu, ipiv, info = lapack.dgbtrf(ab, kl, ku)
    if info > 0:
        raise SingularMatrixError(int(perm[info - 1]))
    if info < 0:
        raise ValueError(f"dgbtrf: illegal argument {-info}")
    return LuFactor(n, perm, lu, ipiv, kl, ku, r, c)


def solve(f: LuFactor, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.n:
        raise ValueError(f"right-hand side has length {b.shape[0]}, expected {f.n}")
    rhs = (f.row_scale[:, None] * b.reshape(f.n, -1))[f.perm]
    y, info = lapack.dgbtrs(f.ab, f.kl, f.ku, rhs, f.ipiv)
    if info != 0:
        raise ValueError(f"dgbtrs failed with info={info}")
    x = np.empty_like(y)
    x[f.perm] = y
    x *= f.col_scale[:, None]
    return x.reshape(b.shape)


def spsolve(a, b: np.ndarray, equilibrate: bool = False) -> np.ndarray:
    return solve(factor(a, equilibrate=equilibrate), b)


def export_matrix_market(path: str | Path, a, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), as_csr(a), comment=comment)
