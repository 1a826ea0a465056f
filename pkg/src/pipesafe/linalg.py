"""Sparse CSR matrices, matrix-vector products, and model-problem generators.

Vectors throughout the package are plain 1-D float64 numpy arrays.  The
matrix type is a canonical CSR triple: within each row the column indices
are strictly increasing and duplicates have been summed, so the kernels'
ascending accumulation order is well defined and matrix-vector products
are bitwise reproducible on a fixed backend.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as kn


class NonFiniteVectorError(ValueError):
    """A vector operand or result contains NaN or Inf."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


@dataclass
class CsrMatrix:
    """Canonical CSR sparse matrix.

    row_ptr has length n_rows + 1; col_idx/values hold the nonzeros of row
    i in slots row_ptr[i]:row_ptr[i+1], sorted by strictly increasing
    column index.
    """

    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    def validate(self) -> "CsrMatrix":
        """Check canonical-form invariants; raise ValueError on violation."""
        rp, ci, v = self.row_ptr, self.col_idx, self.values
        if self.n_rows < 0 or self.n_cols < 0:
            raise ValueError("negative matrix dimension")
        if rp.shape != (self.n_rows + 1,):
            raise ValueError("row_ptr length must be n_rows + 1")
        if rp[0] != 0 or rp[-1] != ci.shape[0] or ci.shape != v.shape:
            raise ValueError("row_ptr endpoints inconsistent with nnz arrays")
        if np.any(np.diff(rp) < 0):
            raise ValueError("row_ptr must be nondecreasing")
        if ci.size:
            if ci.min() < 0 or ci.max() >= self.n_cols:
                raise ValueError("column index out of range")
            # strictly increasing within each row: the only places the
            # concatenated col_idx may step down are row boundaries.
            steps_down = np.nonzero(np.diff(ci) <= 0)[0] + 1
            if not np.isin(steps_down, rp[1:-1]).all():
                raise ValueError("columns must be strictly increasing within a row")
        if not np.isfinite(v).all():
            raise NonFiniteVectorError("matrix values contain non-finite entries")
        return self

    def transpose(self) -> "CsrMatrix":
        coo = self.to_coo()
        return csr_from_coo(self.n_cols, self.n_rows, coo[1], coo[0], coo[2])

    def to_coo(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rows = np.repeat(np.arange(self.n_rows, dtype=np.int64), np.diff(self.row_ptr))
        return rows, self.col_idx.copy(), self.values.copy()

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.shape)
        rows, cols, vals = self.to_coo()
        dense[rows, cols] = vals
        return dense


@dataclass
class MatrixMetadata:
    """Provenance record for a loaded or generated operator."""

    name: str
    n_rows: int
    n_cols: int
    nnz: int
    symmetric: bool
    source: str = ""

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "nnz": self.nnz,
            "symmetric": self.symmetric,
            "source": self.source,
        }


def csr_from_coo(
    n_rows: int,
    n_cols: int,
    rows: np.ndarray,
    cols: np.ndarray,
    vals: np.ndarray,
) -> CsrMatrix:
    """Build a canonical CSR matrix from triplets, summing duplicates."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    if not (rows.shape == cols.shape == vals.shape):
        raise ValueError("triplet arrays must have identical shape")
    if rows.size:
        if rows.min() < 0 or rows.max() >= n_rows:
            raise ValueError("row index out of range")
        if cols.min() < 0 or cols.max() >= n_cols:
            raise ValueError("column index out of range")
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if rows.size:
        first = np.ones(rows.size, dtype=bool)
        first[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        starts = np.nonzero(first)[0]
        vals = np.add.reduceat(vals, starts)
        rows, cols = rows[starts], cols[starts]
    row_ptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.add.at(row_ptr, rows + 1, 1)
    np.cumsum(row_ptr, out=row_ptr)
    return CsrMatrix(n_rows, n_cols, row_ptr, cols, vals).validate()


def check_finite(v: np.ndarray, what: str = "vector") -> np.ndarray:
    if not np.isfinite(v).all():
        bad = int(np.nonzero(~np.isfinite(v))[0][0])
        raise NonFiniteVectorError(f"{what} has non-finite entry at index {bad}", bad)
    return v


def spmv(A: CsrMatrix, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """y = A @ x with fixed ascending accumulation order per row.

    Raises on dimension mismatch and on non-finite output (reporting the
    offending row).
    """
    if x.shape != (A.n_cols,):
        raise ValueError(f"dimension mismatch: A is {A.shape}, x has {x.shape}")
    if out is None:
        out = np.empty(A.n_rows)
    kn.spmv_range(A.row_ptr, A.col_idx, A.values, x, out, 0, A.n_rows)
    check_finite(out, "matvec output row")
    return out


def spmv_rows(
    A: CsrMatrix, x: np.ndarray, out: np.ndarray, lo: int, hi: int
) -> None:
    """Partial product: fill out[lo:hi] with rows lo..hi of A @ x.

    Row slices are disjoint, so concurrent calls on non-overlapping ranges
    compose to exactly the full product.
    """
    kn.spmv_range(A.row_ptr, A.col_idx, A.values, x, out, lo, hi)


def gen_poisson(dim: int, k: int) -> tuple[CsrMatrix, MatrixMetadata]:
    """Finite-difference Laplacian on a dim-dimensional grid of k points per axis.

    Standard 3/5/7-point stencil with 2*dim on the diagonal and -1 for each
    grid neighbor; symmetric positive definite, n = k**dim rows.
    """
    if dim not in (1, 2, 3):
        raise ValueError("dim must be 1, 2, or 3")
    if k < 1:
        raise ValueError("k must be >= 1")
    n = k**dim
    if n > 2**31:
        raise ValueError(f"grid of {n} nodes exceeds the supported size")
    ids = np.arange(n, dtype=np.int64).reshape((k,) * dim)
    rows = [np.arange(n, dtype=np.int64)]
    cols = [np.arange(n, dtype=np.int64)]
    vals = [np.full(n, 2.0 * dim)]
    for axis in range(dim):
        lo = np.moveaxis(ids, axis, 0)[:-1].ravel()
        hi = np.moveaxis(ids, axis, 0)[1:].ravel()
        rows.extend((lo, hi))
        cols.extend((hi, lo))
        vals.extend((np.full(lo.size, -1.0), np.full(hi.size, -1.0)))
    A = csr_from_coo(
        n, n, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    )
    meta = MatrixMetadata(
        name=f"poisson{dim}d:{k}",
        n_rows=n,
        n_cols=n,
        nnz=A.nnz,
        symmetric=True,
        source=f"gen:poisson{dim}d:{k}",
    )
    return A, meta
