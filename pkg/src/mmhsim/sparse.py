"""Sparse matrix storage, Matrix Market ingestion, and reference kernels.

Matrices are kept in compressed form (CSR or CSC) with an explicit value
array.  Canonical form means: offsets non-decreasing and starting at zero,
minor indices strictly increasing within each major slice, no duplicates.
Structural zeros (stored entries whose value happens to be 0.0) are legal
and deliberately preserved: the partial-product accounting downstream
counts contributions per stored entry, not per numeric nonzero.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field


class Layout(enum.Enum):
    CSR = "csr"
    CSC = "csc"


class MatrixMarketError(ValueError):
    """Malformed Matrix Market input; carries a 1-based line number."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


@dataclass
class SparseMatrix:
    """Compressed sparse matrix (CSR or CSC) with 64-bit real values."""

    n_rows: int
    n_cols: int
    layout: Layout
    offsets: list[int]
    minor_indices: list[int]
    values: list[float]

    @property
    def nnz(self) -> int:
        return len(self.values)

    @property
    def major_dim(self) -> int:
        return self.n_rows if self.layout is Layout.CSR else self.n_cols

    @property
    def minor_dim(self) -> int:
        return self.n_cols if self.layout is Layout.CSR else self.n_rows

    def slice(self, major: int) -> tuple[list[int], list[float]]:
        """Minor indices and values of one row (CSR) or column (CSC)."""
        lo, hi = self.offsets[major], self.offsets[major + 1]
        return self.minor_indices[lo:hi], self.values[lo:hi]

    def validate(self) -> None:
        """Raise ValueError if the matrix is not canonical."""
        if self.n_rows < 0 or self.n_cols < 0:
            raise ValueError("negative dimension")
        if len(self.offsets) != self.major_dim + 1:
            raise ValueError("offsets length != major dim + 1")
        if self.offsets[0] != 0:
            raise ValueError("offsets[0] != 0")
        if self.offsets[-1] != len(self.minor_indices) or len(self.minor_indices) != len(self.values):
            raise ValueError("offsets[-1] != nnz")
        prev = 0
        for off in self.offsets:
            if off < prev:
                raise ValueError("offsets not non-decreasing")
            prev = off
        minor_dim = self.minor_dim
        for m in range(self.major_dim):
            last = -1
            for p in range(self.offsets[m], self.offsets[m + 1]):
                idx = self.minor_indices[p]
                if idx <= last:
                    raise ValueError(f"minor indices not strictly increasing in slice {m}")
                if idx < 0 or idx >= minor_dim:
                    raise ValueError(f"minor index {idx} out of range in slice {m}")
                last = idx

    def to_dense(self) -> list[list[float]]:
        dense = [[0.0] * self.n_cols for _ in range(self.n_rows)]
        for m in range(self.major_dim):
            for p in range(self.offsets[m], self.offsets[m + 1]):
                if self.layout is Layout.CSR:
                    dense[m][self.minor_indices[p]] += self.values[p]
                else:
                    dense[self.minor_indices[p]][m] += self.values[p]
        return dense

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (
            self.n_rows == other.n_rows
            and self.n_cols == other.n_cols
            and self.layout == other.layout
            and self.offsets == other.offsets
            and self.minor_indices == other.minor_indices
            and self.values == other.values
        )


@dataclass
class BloatReport:
    """Interim partial-product count versus output nonzero count."""

    pp_interim: int
    nnz_output: int
    bloat_percent: float
    undefined: bool = False


def from_coo(
    n_rows: int,
    n_cols: int,
    entries: list[tuple[int, int, float]],
    layout: Layout = Layout.CSR,
) -> SparseMatrix:
    """Build a canonical matrix from (row, col, value) triples.

    Duplicate coordinates are summed.  Zero-valued entries are kept as
    structural zeros.
    """
    major_dim = n_rows if layout is Layout.CSR else n_cols
    acc: dict[tuple[int, int], float] = {}
    for r, c, v in entries:
        if not (0 <= r < n_rows and 0 <= c < n_cols):
            raise ValueError(f"entry ({r}, {c}) out of range for {n_rows}x{n_cols}")
        key = (r, c) if layout is Layout.CSR else (c, r)
        acc[key] = acc.get(key, 0.0) + v
    offsets = [0] * (major_dim + 1)
    minor: list[int] = []
    values: list[float] = []
    for (mj, mn) in sorted(acc):
        offsets[mj + 1] += 1
        minor.append(mn)
        values.append(acc[(mj, mn)])
    for i in range(major_dim):
        offsets[i + 1] += offsets[i]
    return SparseMatrix(n_rows, n_cols, layout, offsets, minor, values)


def from_dense(rows: list[list[float]], layout: Layout = Layout.CSR) -> SparseMatrix:
    """Build from a dense row-major list of lists, dropping numeric zeros."""
    n_rows = len(rows)
    n_cols = len(rows[0]) if rows else 0
    entries = [
        (r, c, v)
        for r, row in enumerate(rows)
        for c, v in enumerate(row)
        if v != 0.0
    ]
    return from_coo(n_rows, n_cols, entries, layout)


def identity(n: int, layout: Layout = Layout.CSR) -> SparseMatrix:
    return SparseMatrix(n, n, layout, list(range(n + 1)), list(range(n)), [1.0] * n)


def load_matrix_market(path: str, layout: Layout = Layout.CSR) -> SparseMatrix:
    """Parse a Matrix Market coordinate file into a canonical matrix.

    Supports real, integer, and pattern fields with general or symmetric
    symmetry.  Pattern entries get value 1.0.  Symmetric files are expanded
    to full storage.  Duplicate coordinates are summed.
    """
    with open(path, "r", encoding="ascii", errors="replace") as f:
        lines = f.readlines()
    if not lines:
        raise MatrixMarketError("empty file", 1)
    header = lines[0].split()
    if len(header) != 5 or header[0] not in ("%%MatrixMarket", "%MatrixMarket"):
        raise MatrixMarketError("expected '%%MatrixMarket matrix coordinate <field> <symmetry>' header", 1)
    obj, fmt, fld, sym = (tok.lower() for tok in header[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixMarketError(f"unsupported object/format '{obj} {fmt}'", 1)
    if fld not in ("real", "integer", "pattern"):
        raise MatrixMarketError(f"unsupported field '{fld}'", 1)
    if sym not in ("general", "symmetric"):
        raise MatrixMarketError(f"unsupported symmetry '{sym}'", 1)
    pattern = fld == "pattern"

    size_line = None
    size_line_no = 0
    body_start = 0
    for i in range(1, len(lines)):
        stripped = lines[i].strip()
        if not stripped or stripped.startswith("%"):
            continue
        size_line = stripped
        size_line_no = i + 1
        body_start = i + 1
        break
    if size_line is None:
        raise MatrixMarketError("missing size line", len(lines))
    parts = size_line.split()
    if len(parts) != 3:
        raise MatrixMarketError("size line must be 'rows cols nnz'", size_line_no)
    try:
        n_rows, n_cols, n_entries = (int(p) for p in parts)
    except ValueError:
        raise MatrixMarketError("size line must hold three integers", size_line_no) from None

    entries: list[tuple[int, int, float]] = []
    seen = 0
    for i in range(body_start, len(lines)):
        stripped = lines[i].strip()
        if not stripped or stripped.startswith("%"):
            continue
        parts = stripped.split()
        want = 2 if pattern else 3
        if len(parts) < want:
            raise MatrixMarketError(f"expected {want} fields, got {len(parts)}", i + 1)
        try:
            r = int(parts[0])
            c = int(parts[1])
            v = 1.0 if pattern else float(parts[2])
        except ValueError:
            raise MatrixMarketError("unparseable coordinate entry", i + 1) from None
        if not (1 <= r <= n_rows and 1 <= c <= n_cols):
            raise MatrixMarketError(f"coordinate ({r}, {c}) out of range for {n_rows}x{n_cols}", i + 1)
        entries.append((r - 1, c - 1, v))
        if sym == "symmetric" and r != c:
            entries.append((c - 1, r - 1, v))
        seen += 1
    if seen != n_entries:
        raise MatrixMarketError(f"declared {n_entries} entries but found {seen}", len(lines))
    return from_coo(n_rows, n_cols, entries, layout)


def convert_layout(m: SparseMatrix, target: Layout) -> SparseMatrix:
    """Re-express the same logical matrix in the target layout.

    Round-trip conversion is the identity on canonical input.
    """
    if m.layout is target:
        return SparseMatrix(
            m.n_rows, m.n_cols, m.layout, list(m.offsets), list(m.minor_indices), list(m.values)
        )
    # Counting sort over the minor dimension; stable, so minor runs stay
    # sorted by the old major index, which is exactly canonical order.
    new_major = m.minor_dim
    offsets = [0] * (new_major + 1)
    for idx in m.minor_indices:
        offsets[idx + 1] += 1
    for i in range(new_major):
        offsets[i + 1] += offsets[i]
    cursor = list(offsets)
    minor = [0] * m.nnz
    values = [0.0] * m.nnz
    for mj in range(m.major_dim):
        for p in range(m.offsets[mj], m.offsets[mj + 1]):
            dst = cursor[m.minor_indices[p]]
            cursor[m.minor_indices[p]] += 1
            minor[dst] = mj
            values[dst] = m.values[p]
    return SparseMatrix(m.n_rows, m.n_cols, target, offsets, minor, values)


def oracle_spgemm(a: SparseMatrix, b: SparseMatrix) -> SparseMatrix:
    """Reference row-wise sparse product with a dense accumulator.

    Accumulation proceeds left to right over ascending k.  The output keeps
    every structurally touched position, including values that cancel to
    zero.  Output is canonical CSR.
    """
    if a.n_cols != b.n_rows:
        raise ValueError(f"dimension mismatch: {a.n_rows}x{a.n_cols} times {b.n_rows}x{b.n_cols}")
    a_csr = convert_layout(a, Layout.CSR)
    b_csr = convert_layout(b, Layout.CSR)
    offsets = [0]
    minor: list[int] = []
    values: list[float] = []
    acc = [0.0] * b.n_cols
    mark = [False] * b.n_cols
    for r in range(a.n_rows):
        touched: list[int] = []
        for p in range(a_csr.offsets[r], a_csr.offsets[r + 1]):
            k = a_csr.minor_indices[p]
            av = a_csr.values[p]
            for q in range(b_csr.offsets[k], b_csr.offsets[k + 1]):
                c = b_csr.minor_indices[q]
                if not mark[c]:
                    mark[c] = True
                    touched.append(c)
                acc[c] += av * b_csr.values[q]
        touched.sort()
        for c in touched:
            minor.append(c)
            values.append(acc[c])
            acc[c] = 0.0
            mark[c] = False
        offsets.append(len(minor))
    return SparseMatrix(a.n_rows, b.n_cols, Layout.CSR, offsets, minor, values)


def bloat_analysis(a: SparseMatrix, b: SparseMatrix) -> BloatReport:
    """Count interim partial products against output nonzeros.

    pp_interim sums, over every stored entry a[r, k], the stored length of
    row k of B.  nnz_output is the structural nonzero count of the product.
    """
    if a.n_cols != b.n_rows:
        raise ValueError(f"dimension mismatch: {a.n_rows}x{a.n_cols} times {b.n_rows}x{b.n_cols}")
    a_csr = convert_layout(a, Layout.CSR)
    b_csr = convert_layout(b, Layout.CSR)
    row_nnz = [b_csr.offsets[k + 1] - b_csr.offsets[k] for k in range(b.n_rows)]
    pp = sum(row_nnz[k] for k in a_csr.minor_indices)
    nnz_out = oracle_spgemm(a_csr, b_csr).nnz
    if nnz_out == 0:
        return BloatReport(pp, 0, math.nan, undefined=True)
    return BloatReport(pp, nnz_out, (pp - nnz_out) / nnz_out * 100.0)


def relu(m: SparseMatrix) -> SparseMatrix:
    """Clamp every stored value at zero; structure is unchanged."""
    return SparseMatrix(
        m.n_rows,
        m.n_cols,
        m.layout,
        list(m.offsets),
        list(m.minor_indices),
        [v if v > 0.0 else 0.0 for v in m.values],
    )
