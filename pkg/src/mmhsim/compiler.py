"""Lowers sparse matrix multiplication onto the two-instruction ISA.

The schedule is a tiled row-wise product: the left operand arrives in
column-compressed form, the right operand in row-compressed form.  For
each column k of A, the stored entries are grouped by aligned blocks of
`width` output rows (lane i of a group holds row block*width + i, lane
masks mark the rows actually present).  For each such A tile, row k of B
is walked in runs of up to `width` stored entries, and one multiply
instruction is emitted per (A tile, B run) pair.

A symbolic pre-pass counts, for every output element, how many scalar
products will feed it; every emitted lane carries that multiplicity minus
one in the counter segment, so the accumulator can detect completion
regardless of arrival order.  Because output tags are row * n_cols + col,
the row block of a tag is recoverable anywhere as (tag // n_cols) // width.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from .isa import (
    Mmh4Instruction,
    StreamMeta,
    read_stream,
    write_stream,
)
from .sparse import Layout, SparseMatrix, convert_layout, oracle_spgemm, relu

ADDRESS_SPACE = 1 << 32
SEGMENT_ALIGN = 64
VALUE_BYTES = 8
INDEX_BYTES = 4
COUNTER_BYTES = 2
MAX_COUNTER = 0xFFFF

IMAGE_MAGIC = b"MMIM"
IMAGE_VERSION = 1


class CompileError(ValueError):
    """Workload cannot be lowered (dimensions, address space, counters)."""


class SegmentRole(enum.Enum):
    A_DATA = 0
    A_ROW_IDS = 1
    B_COL_IND = 2
    B_DATA = 3
    COUNTERS = 4
    OUTPUT = 5


@dataclass
class Segment:
    role: SegmentRole
    base: int
    payload: bytes

    @property
    def size(self) -> int:
        return len(self.payload)

    @property
    def end(self) -> int:
        return self.base + len(self.payload)


@dataclass
class MemoryImage:
    """Simulated address space: disjoint 64-byte-aligned segments."""

    segments: list[Segment]
    total_size: int

    def segment(self, role: SegmentRole) -> Segment:
        for seg in self.segments:
            if seg.role is role:
                return seg
        raise KeyError(role)

    def contains(self, addr: int, nbytes: int = 1) -> bool:
        return 0 <= addr and addr + nbytes <= self.total_size

    def _locate(self, addr: int, nbytes: int) -> tuple[Segment, int]:
        for seg in self.segments:
            if seg.base <= addr and addr + nbytes <= seg.end:
                return seg, addr - seg.base
        raise ValueError(f"address 0x{addr:x}+{nbytes} falls outside every segment")

    def read_f64(self, addr: int) -> float:
        seg, off = self._locate(addr, 8)
        return struct.unpack_from("<d", seg.payload, off)[0]

    def read_u32(self, addr: int) -> int:
        seg, off = self._locate(addr, 4)
        return struct.unpack_from("<I", seg.payload, off)[0]

    def read_u16(self, addr: int) -> int:
        seg, off = self._locate(addr, 2)
        return struct.unpack_from("<H", seg.payload, off)[0]


@dataclass
class CompiledWorkload:
    """Instruction stream plus memory image plus conservation facts."""

    image: MemoryImage
    instructions: list[Mmh4Instruction]
    row_blocks: list[int]
    row_block_boundaries: list[int]
    expected_pp_count: int
    expected_output_nnz: int
    n_rows: int  # output rows
    n_cols: int  # output cols
    mmh_width: int

    @property
    def output_base(self) -> int:
        return self.image.segment(SegmentRole.OUTPUT).base

    def output_addr(self, tag: int) -> int:
        return self.output_base + tag * VALUE_BYTES

    def tag_of_output_addr(self, addr: int) -> int:
        off = addr - self.output_base
        if off < 0 or off % VALUE_BYTES:
            raise ValueError(f"0x{addr:x} is not an output element address")
        return off // VALUE_BYTES


def _align(addr: int) -> int:
    return (addr + SEGMENT_ALIGN - 1) // SEGMENT_ALIGN * SEGMENT_ALIGN


def _segment_bases(a_nnz: int, b_nnz: int, pp_count: int, out_elems: int) -> dict[SegmentRole, tuple[int, int]]:
    """Assign (base, size) per role, ascending and 64-byte aligned."""
    sizes = {
        SegmentRole.A_DATA: a_nnz * VALUE_BYTES,
        SegmentRole.A_ROW_IDS: a_nnz * INDEX_BYTES,
        SegmentRole.B_COL_IND: b_nnz * INDEX_BYTES,
        SegmentRole.B_DATA: b_nnz * VALUE_BYTES,
        SegmentRole.COUNTERS: pp_count * COUNTER_BYTES,
        SegmentRole.OUTPUT: out_elems * VALUE_BYTES,
    }
    out: dict[SegmentRole, tuple[int, int]] = {}
    cursor = 0
    for role in SegmentRole:
        base = _align(cursor)
        out[role] = (base, sizes[role])
        cursor = base + sizes[role]
    if cursor >= ADDRESS_SPACE:
        raise CompileError(f"memory image needs {cursor} bytes, beyond the 32-bit address space")
    return out


def layout_memory(
    a_csc: SparseMatrix,
    b_csr: SparseMatrix,
    counter_words: list[int],
    out_rows: int,
    out_cols: int,
) -> MemoryImage:
    """Build the memory image for a lowered workload.

    Segment order is fixed: A values, A row ids, B column indices, B
    values, counters, output.  The output segment is address space the
    accumulators write back into; its payload starts zeroed.
    """
    bases = _segment_bases(a_csc.nnz, b_csr.nnz, len(counter_words), out_rows * out_cols)
    a_rows: list[int] = []
    for k in range(a_csc.major_dim):
        lo, hi = a_csc.offsets[k], a_csc.offsets[k + 1]
        a_rows.extend(a_csc.minor_indices[lo:hi])
    payloads = {
        SegmentRole.A_DATA: struct.pack(f"<{a_csc.nnz}d", *a_csc.values),
        SegmentRole.A_ROW_IDS: struct.pack(f"<{a_csc.nnz}I", *a_rows),
        SegmentRole.B_COL_IND: struct.pack(f"<{b_csr.nnz}I", *b_csr.minor_indices),
        SegmentRole.B_DATA: struct.pack(f"<{b_csr.nnz}d", *b_csr.values),
        SegmentRole.COUNTERS: struct.pack(f"<{len(counter_words)}H", *counter_words),
        SegmentRole.OUTPUT: bytes(out_rows * out_cols * VALUE_BYTES),
    }
    segments = [Segment(role, bases[role][0], payloads[role]) for role in SegmentRole]
    total = segments[-1].end
    return MemoryImage(segments, total)


def compile_spgemm(a: SparseMatrix, b: SparseMatrix, width: int = 4) -> CompiledWorkload:
    """Lower C = A * B into instructions, counters, and a memory image."""
    if width not in (1, 2, 4, 8):
        raise CompileError("tile width must be one of 1, 2, 4, 8")
    if a.n_cols != b.n_rows:
        raise CompileError(f"dimension mismatch: {a.n_rows}x{a.n_cols} times {b.n_rows}x{b.n_cols}")
    if a.n_rows * b.n_cols >= ADDRESS_SPACE:
        raise CompileError(
            f"output index space {a.n_rows}x{b.n_cols} does not fit a 32-bit tag"
        )
    a_csc = convert_layout(a, Layout.CSC)
    b_csr = convert_layout(b, Layout.CSR)
    n_cols = b.n_cols

    # Symbolic pre-pass: contribution multiplicity per output tag.
    mult: dict[int, int] = {}
    pp_count = 0
    for k in range(a_csc.n_cols):
        alo, ahi = a_csc.offsets[k], a_csc.offsets[k + 1]
        if alo == ahi:
            continue
        blo, bhi = b_csr.offsets[k], b_csr.offsets[k + 1]
        if blo == bhi:
            continue
        cols = b_csr.minor_indices[blo:bhi]
        for p in range(alo, ahi):
            row_base = a_csc.minor_indices[p] * n_cols
            for c in cols:
                tag = row_base + c
                mult[tag] = mult.get(tag, 0) + 1
        pp_count += (ahi - alo) * (bhi - blo)

    for tag, m in mult.items():
        if m - 1 > MAX_COUNTER:
            raise CompileError(
                f"output tag {tag} has {m} contributions; counter field holds at most {MAX_COUNTER + 1}"
            )

    bases = _segment_bases(a_csc.nnz, b_csr.nnz, pp_count, a.n_rows * n_cols)
    a_data_base = bases[SegmentRole.A_DATA][0]
    b_colind_base = bases[SegmentRole.B_COL_IND][0]
    b_data_base = bases[SegmentRole.B_DATA][0]
    counters_base = bases[SegmentRole.COUNTERS][0]

    id_slots = 4 if width <= 4 else 8  # record has 4 row-id slots, wide record 8

    instructions: list[Mmh4Instruction] = []
    row_blocks: list[int] = []
    counter_words: list[int] = []
    counter_cursor = 0

    for k in range(a_csc.n_cols):
        alo, ahi = a_csc.offsets[k], a_csc.offsets[k + 1]
        if alo == ahi:
            continue
        blo, bhi = b_csr.offsets[k], b_csr.offsets[k + 1]
        if blo == bhi:
            continue
        # Group this column's entries by aligned blocks of `width` rows.
        p = alo
        while p < ahi:
            block = a_csc.minor_indices[p] // width
            q = p
            mask_a = 0
            while q < ahi and a_csc.minor_indices[q] // width == block:
                mask_a |= 1 << (a_csc.minor_indices[q] - block * width)
                q += 1
            pa = q - p
            a_rows = a_csc.minor_indices[p:q]
            row_ids = tuple(block * width + i for i in range(width)) + (0,) * (id_slots - width)
            for j0 in range(blo, bhi, width):
                j1 = min(j0 + width, bhi)
                pb = j1 - j0
                mask_b = (1 << pb) - 1
                for r in a_rows:
                    row_base = r * n_cols
                    for j in range(j0, j1):
                        counter_words.append(mult[row_base + b_csr.minor_indices[j]] - 1)
                instructions.append(
                    Mmh4Instruction(
                        base_addr=0,
                        a_data_addr=a_data_base + p * VALUE_BYTES,
                        b_col_ind_addr=b_colind_base + j0 * INDEX_BYTES,
                        b_data_addr=b_data_base + j0 * VALUE_BYTES,
                        roll_counter_addr=counters_base + counter_cursor * COUNTER_BYTES,
                        a_row_ids=row_ids,
                        lane_mask_a=mask_a,
                        lane_mask_b=mask_b,
                    )
                )
                row_blocks.append(block)
                counter_cursor += pa * pb
            p = q

    if counter_cursor != pp_count:
        raise AssertionError("counter pre-pass and emission disagree on partial product count")

    boundaries = [
        i for i in range(len(instructions)) if i == 0 or row_blocks[i] != row_blocks[i - 1]
    ]
    image = layout_memory(a_csc, b_csr, counter_words, a.n_rows, n_cols)
    return CompiledWorkload(
        image=image,
        instructions=instructions,
        row_blocks=row_blocks,
        row_block_boundaries=boundaries,
        expected_pp_count=pp_count,
        expected_output_nnz=len(mult),
        n_rows=a.n_rows,
        n_cols=n_cols,
        mmh_width=width,
    )


def compile_gcn_layer(
    a: SparseMatrix, x: SparseMatrix, w: SparseMatrix, width: int = 4
) -> tuple[CompiledWorkload, CompiledWorkload]:
    """Lower one graph-convolution layer as two chained products.

    The first workload computes P = A * X; the second computes P * W using
    the functional product for P's structure and values.  The nonlinearity
    is applied by the driver after simulation, not lowered.
    """
    if a.n_cols != x.n_rows or x.n_cols != w.n_rows:
        raise CompileError(
            f"dimension chain broken: {a.n_rows}x{a.n_cols} * {x.n_rows}x{x.n_cols} * {w.n_rows}x{w.n_cols}"
        )
    first = compile_spgemm(a, x, width)
    p = oracle_spgemm(a, x)
    second = compile_spgemm(convert_layout(p, Layout.CSC), w, width)
    return first, second


def iter_lanes(workload: CompiledWorkload, index: int):
    """Yield (tag, a_value, b_value, counter) per populated lane.

    Lane data is read back from the memory image exactly as the multiply
    engine's address generator would: A values from the instruction's
    contiguous A run, B columns/values from the B run, counters from the
    instruction's packed counter block in (a rank, b rank) order.
    """
    instr = workload.instructions[index]
    image = workload.image
    n_cols = workload.n_cols
    width = workload.mmh_width
    a_lanes = [i for i in range(width) if instr.lane_mask_a >> i & 1]
    b_lanes = [j for j in range(width) if instr.lane_mask_b >> j & 1]
    pb = len(b_lanes)
    for ra, i in enumerate(a_lanes):
        row = instr.a_row_ids[i]
        a_val = image.read_f64(instr.a_data_addr + ra * VALUE_BYTES)
        for rb in range(pb):
            col = image.read_u32(instr.b_col_ind_addr + rb * INDEX_BYTES)
            b_val = image.read_f64(instr.b_data_addr + rb * VALUE_BYTES)
            counter = image.read_u16(instr.roll_counter_addr + (ra * pb + rb) * COUNTER_BYTES)
            yield row * n_cols + col, a_val, b_val, counter


def replay_functional(workload: CompiledWorkload) -> SparseMatrix:
    """Zero-latency interpretation of the stream; returns the product.

    Used as a correctness bridge: the replayed result must equal the
    functional reference on any compiled workload.
    """
    sums: dict[int, float] = {}
    remaining: dict[int, int] = {}
    for i in range(len(workload.instructions)):
        for tag, a_val, b_val, counter in iter_lanes(workload, i):
            if tag in sums:
                sums[tag] += a_val * b_val
                remaining[tag] -= 1
            else:
                sums[tag] = a_val * b_val
                remaining[tag] = counter
    if any(v != 0 for v in remaining.values()):
        raise AssertionError("counters did not land on zero during replay")
    n_cols = workload.n_cols
    offsets = [0] * (workload.n_rows + 1)
    entries = sorted(sums.items())
    minor = [0] * len(entries)
    values = [0.0] * len(entries)
    for idx, (tag, v) in enumerate(entries):
        r, c = divmod(tag, n_cols)
        offsets[r + 1] += 1
        minor[idx] = c
        values[idx] = v
    for r in range(workload.n_rows):
        offsets[r + 1] += offsets[r]
    return SparseMatrix(workload.n_rows, n_cols, Layout.CSR, offsets, minor, values)


def write_image(path: str, image: MemoryImage) -> None:
    """Segment table followed by raw payload bytes."""
    with open(path, "wb") as f:
        f.write(struct.pack("<4sBBIQ", IMAGE_MAGIC, IMAGE_VERSION, len(image.segments), 0, image.total_size))
        for seg in image.segments:
            f.write(struct.pack("<BIQ", seg.role.value, seg.base, seg.size))
        for seg in image.segments:
            f.write(seg.payload)


def read_image(path: str) -> MemoryImage:
    with open(path, "rb") as f:
        blob = f.read()
    head = struct.calcsize("<4sBBIQ")
    magic, version, n_segs, _, total = struct.unpack_from("<4sBBIQ", blob, 0)
    if magic != IMAGE_MAGIC:
        raise ValueError("bad image magic")
    if version != IMAGE_VERSION:
        raise ValueError(f"unsupported image version {version}")
    pos = head
    table = []
    for _ in range(n_segs):
        role, base, size = struct.unpack_from("<BIQ", blob, pos)
        pos += struct.calcsize("<BIQ")
        table.append((SegmentRole(role), base, size))
    segments = []
    for role, base, size in table:
        segments.append(Segment(role, base, blob[pos : pos + size]))
        pos += size
    return MemoryImage(segments, total)


def save_workload(workload: CompiledWorkload, stream_path: str, image_path: str) -> None:
    write_stream(
        stream_path,
        workload.instructions,
        StreamMeta(workload.n_rows, workload.n_cols, workload.mmh_width),
    )
    write_image(image_path, workload.image)


def load_workload(stream_path: str, image_path: str) -> CompiledWorkload:
    """Reconstruct a workload from its two files.

    Conservation facts are recomputed from the records themselves.
    """
    meta, instructions = read_stream(stream_path)
    image = read_image(image_path)
    width = meta.mmh_width
    row_blocks = []
    for instr in instructions:
        first_lane = (instr.lane_mask_a & -instr.lane_mask_a).bit_length() - 1
        row_blocks.append(instr.a_row_ids[first_lane] // width)
    boundaries = [
        i for i in range(len(instructions)) if i == 0 or row_blocks[i] != row_blocks[i - 1]
    ]
    workload = CompiledWorkload(
        image=image,
        instructions=instructions,
        row_blocks=row_blocks,
        row_block_boundaries=boundaries,
        expected_pp_count=sum(instr.hacc_count for instr in instructions),
        expected_output_nnz=0,
        n_rows=meta.n_rows,
        n_cols=meta.n_cols,
        mmh_width=width,
    )
    tags = set()
    for i in range(len(instructions)):
        for tag, _, _, _ in iter_lanes(workload, i):
            tags.add(tag)
    workload.expected_output_nnz = len(tags)
    return workload


def apply_relu(m: SparseMatrix) -> SparseMatrix:
    """Driver-side nonlinearity for the chained layer."""
    return relu(m)
