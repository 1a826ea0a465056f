"""Matrix Market coordinate-format reader and writer.

Supports real and integer fields with general or symmetric symmetry.
Symmetric files store one triangle; loading expands them to the full
operator (off-diagonal entries mirrored), so reported nnz can exceed the
file's entry count.  Duplicate entries are summed.  Indices are 1-based
on disk and 0-based in memory.
"""

from __future__ import annotations

import io

import numpy as np

from .linalg import CsrMatrix, MatrixMetadata, csr_from_coo


class MatrixMarketError(ValueError):
    """Malformed or unsupported Matrix Market content."""

    def __init__(self, message: str, path: str = "", line: int | None = None):
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.path = path
        self.line = line


_SUPPORTED_FIELDS = {"real", "integer"}
_SUPPORTED_SYMMETRY = {"general", "symmetric"}


def load_matrix_market(path: str) -> tuple[CsrMatrix, MatrixMetadata]:
    """Read a coordinate Matrix Market file into canonical CSR form."""
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines:
        raise MatrixMarketError("empty file", path, 1)

    header = lines[0].strip().lower().split()
    if len(header) != 5 or header[0] != "%%matrixmarket":
        raise MatrixMarketError("missing %%MatrixMarket header", path, 1)
    _, obj, fmt, field, symmetry = header
    if obj != "matrix":
        raise MatrixMarketError(f"unsupported object {obj!r}", path, 1)
    if fmt != "coordinate":
        raise MatrixMarketError(f"unsupported format {fmt!r} (need coordinate)", path, 1)
    if field not in _SUPPORTED_FIELDS:
        raise MatrixMarketError(f"unsupported field {field!r} (need real/integer)", path, 1)
    if symmetry not in _SUPPORTED_SYMMETRY:
        raise MatrixMarketError(
            f"unsupported symmetry {symmetry!r} (need general/symmetric)", path, 1
        )

    # locate the size line: first non-comment, non-blank line after the header
    size_lineno = None
    for lineno, raw in enumerate(lines[1:], start=2):
        stripped = raw.strip()
        if not stripped or stripped.startswith("%"):
            continue
        size_lineno = lineno
        break
    if size_lineno is None:
        raise MatrixMarketError("missing size line", path, len(lines))
    parts = lines[size_lineno - 1].split()
    if len(parts) != 3:
        raise MatrixMarketError("size line must be 'rows cols nnz'", path, size_lineno)
    try:
        n_rows, n_cols, n_entries = (int(p) for p in parts)
    except ValueError:
        raise MatrixMarketError("non-integer size line", path, size_lineno) from None
    if n_rows < 0 or n_cols < 0 or n_entries < 0:
        raise MatrixMarketError("negative dimension on size line", path, size_lineno)

    body = lines[size_lineno:]
    data_lines = []
    data_linenos = []
    for lineno, raw in enumerate(body, start=size_lineno + 1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("%"):
            continue
        data_lines.append(stripped)
        data_linenos.append(lineno)
    if len(data_lines) != n_entries:
        raise MatrixMarketError(
            f"size line promises {n_entries} entries, file holds {len(data_lines)}",
            path,
            size_lineno,
        )

    if n_entries:
        try:
            table = np.loadtxt(
                io.StringIO("\n".join(data_lines)), dtype=np.float64, ndmin=2
            )
        except ValueError:
            _locate_bad_entry(data_lines, data_linenos, path)
            raise  # unreachable; _locate_bad_entry always raises
        if table.shape[1] != 3:
            bad = next(
                (k for k, ln in enumerate(data_lines) if len(ln.split()) != 3), 0
            )
            raise MatrixMarketError(
                "entry must be 'row col value'", path, data_linenos[bad]
            )
        rows = table[:, 0]
        cols = table[:, 1]
        vals = table[:, 2]
        if np.any(rows != np.floor(rows)) or np.any(cols != np.floor(cols)):
            bad = int(np.nonzero((rows != np.floor(rows)) | (cols != np.floor(cols)))[0][0])
            raise MatrixMarketError("non-integer index", path, data_linenos[bad])
        rows = rows.astype(np.int64) - 1
        cols = cols.astype(np.int64) - 1
        oob = (rows < 0) | (rows >= n_rows) | (cols < 0) | (cols >= n_cols)
        if np.any(oob):
            bad = int(np.nonzero(oob)[0][0])
            raise MatrixMarketError(
                f"index ({rows[bad] + 1}, {cols[bad] + 1}) outside "
                f"{n_rows} x {n_cols}",
                path,
                data_linenos[bad],
            )
    else:
        rows = np.empty(0, dtype=np.int64)
        cols = np.empty(0, dtype=np.int64)
        vals = np.empty(0)

    symmetric = symmetry == "symmetric"
    if symmetric:
        if n_rows != n_cols:
            raise MatrixMarketError("symmetric matrix must be square", path, size_lineno)
        off = rows != cols
        mirror_r, mirror_c, mirror_v = cols[off], rows[off], vals[off]
        rows = np.concatenate([rows, mirror_r])
        cols = np.concatenate([cols, mirror_c])
        vals = np.concatenate([vals, mirror_v])

    A = csr_from_coo(n_rows, n_cols, rows, cols, vals)
    name = path.rsplit("/", 1)[-1]
    if name.endswith(".mtx"):
        name = name[: -len(".mtx")]
    meta = MatrixMetadata(
        name=name,
        n_rows=n_rows,
        n_cols=n_cols,
        nnz=A.nnz,
        symmetric=symmetric,
        source=path,
    )
    return A, meta


def _locate_bad_entry(data_lines, data_linenos, path):
    for k, ln in enumerate(data_lines):
        parts = ln.split()
        if len(parts) != 3:
            raise MatrixMarketError("entry must be 'row col value'", path, data_linenos[k])
        try:
            int(float(parts[0])), int(float(parts[1])), float(parts[2])
        except ValueError:
            raise MatrixMarketError(
                f"unparseable entry {ln!r}", path, data_linenos[k]
            ) from None
    raise MatrixMarketError("unparseable entry", path, data_linenos[0] if data_linenos else 1)


def write_matrix_market(path: str, A: CsrMatrix, comment: str = "") -> None:
    """Write a CSR matrix as general real coordinate Matrix Market."""
    rows, cols, vals = A.to_coo()
    with open(path, "w", encoding="ascii") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        if comment:
            for ln in comment.splitlines():
                fh.write(f"% {ln}\n")
        fh.write(f"{A.n_rows} {A.n_cols} {A.nnz}\n")
        for r, c, v in zip(rows, cols, vals):
            fh.write(f"{r + 1} {c + 1} {v:.17g}\n")
