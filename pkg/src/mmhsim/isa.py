"""Instruction encodings for the two-instruction accelerator ISA.

Two instructions exist: the multiply instruction MMH ("matrix multiply
hash", up to 4 lanes per side in its standard record, 8 in the wide
record) and the accumulate instruction HACC ("hash accumulate").  All
records are fixed width, little endian:

    HACC  = opcode(8) | tag(32) | data(64) | counter(16)            15 bytes
    MMH4  = opcode(8) | base(32) | 4 x offset(32) | 4 x row_id(32)
            | mask_a(4)+mask_b(4)                                   38 bytes
    MMH8  = opcode(8) | base(32) | 4 x offset(32) | 8 x row_id(32)
            | mask_a(8) | mask_b(8)                                 55 bytes

Lane widths 1 and 2 reuse the MMH4 record; the lane masks carry the
truth about which lanes are populated.  A stream file is a small header
followed by packed records and a terminator byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

OPCODE_MMH4 = 0x01
OPCODE_HACC = 0x02
OPCODE_MMH8 = 0x03
OPCODE_END = 0xFF

MMH4_SIZE = 38
MMH8_SIZE = 55
HACC_SIZE = 15

STREAM_MAGIC = b"MMHS"
STREAM_VERSION = 1

_MMH4_FMT = "<B5I4IB"
_MMH8_FMT = "<B5I8IBB"
_HACC_FMT = "<BIdH"


class IsaError(ValueError):
    """Bad instruction contents or undecodable bytes."""


@dataclass(frozen=True)
class Mmh4Instruction:
    """One multiply instruction: an A tile crossed with a B tile.

    a_row_ids carries one output-row id per A lane; lane masks mark which
    lanes hold real operands.  len(a_row_ids) is 4 for widths up to 4 and
    8 for the wide variant.
    """

    base_addr: int
    a_data_addr: int
    b_col_ind_addr: int
    b_data_addr: int
    roll_counter_addr: int
    a_row_ids: tuple[int, ...]
    lane_mask_a: int
    lane_mask_b: int

    @property
    def lane_width(self) -> int:
        return len(self.a_row_ids)

    @property
    def lanes_a(self) -> int:
        return bin(self.lane_mask_a).count("1")

    @property
    def lanes_b(self) -> int:
        return bin(self.lane_mask_b).count("1")

    @property
    def hacc_count(self) -> int:
        return self.lanes_a * self.lanes_b

    def validate(self) -> None:
        w = self.lane_width
        if w not in (4, 8):
            raise IsaError(f"a_row_ids must hold 4 or 8 ids, got {w}")
        full = (1 << w) - 1
        if not (0 < self.lane_mask_a <= full) or not (0 < self.lane_mask_b <= full):
            raise IsaError("each lane mask needs at least one bit set and must fit the lane width")
        for name in ("base_addr", "a_data_addr", "b_col_ind_addr", "b_data_addr", "roll_counter_addr"):
            v = getattr(self, name)
            if not (0 <= v < 1 << 32):
                raise IsaError(f"{name} out of 32-bit range")
        for rid in self.a_row_ids:
            if not (0 <= rid < 1 << 32):
                raise IsaError("row id out of 32-bit range")


@dataclass(frozen=True)
class HaccInstruction:
    """One partial product headed for accumulation.

    counter is (total contributions to this tag) - 1 and is identical in
    every instruction that shares the tag, so completion detection does not
    depend on arrival order.
    """

    tag: int
    data: float
    counter: int

    def validate(self) -> None:
        if not (0 <= self.tag < 1 << 32):
            raise IsaError("tag out of 32-bit range")
        if not (0 <= self.counter < 1 << 16):
            raise IsaError("counter out of 16-bit range")


Instruction = Mmh4Instruction | HaccInstruction


def encode(instr: Instruction) -> bytes:
    instr.validate()
    if isinstance(instr, HaccInstruction):
        return struct.pack(_HACC_FMT, OPCODE_HACC, instr.tag, instr.data, instr.counter)
    if instr.lane_width == 4:
        masks = (instr.lane_mask_a & 0xF) | ((instr.lane_mask_b & 0xF) << 4)
        return struct.pack(
            _MMH4_FMT,
            OPCODE_MMH4,
            instr.base_addr,
            instr.a_data_addr,
            instr.b_col_ind_addr,
            instr.b_data_addr,
            instr.roll_counter_addr,
            *instr.a_row_ids,
            masks,
        )
    return struct.pack(
        _MMH8_FMT,
        OPCODE_MMH8,
        instr.base_addr,
        instr.a_data_addr,
        instr.b_col_ind_addr,
        instr.b_data_addr,
        instr.roll_counter_addr,
        *instr.a_row_ids,
        instr.lane_mask_a,
        instr.lane_mask_b,
    )


def record_size(opcode: int) -> int:
    sizes = {OPCODE_MMH4: MMH4_SIZE, OPCODE_MMH8: MMH8_SIZE, OPCODE_HACC: HACC_SIZE}
    if opcode not in sizes:
        raise IsaError(f"unknown opcode 0x{opcode:02x}")
    return sizes[opcode]


def decode(buf: bytes) -> Instruction:
    """Inverse of encode; the buffer must hold exactly one record."""
    if not buf:
        raise IsaError("empty buffer")
    opcode = buf[0]
    size = record_size(opcode)
    if len(buf) != size:
        raise IsaError(f"opcode 0x{opcode:02x} needs {size} bytes, got {len(buf)}")
    if opcode == OPCODE_HACC:
        _, tag, data, counter = struct.unpack(_HACC_FMT, buf)
        return HaccInstruction(tag, data, counter)
    if opcode == OPCODE_MMH4:
        fields = struct.unpack(_MMH4_FMT, buf)
        masks = fields[10]
        return Mmh4Instruction(
            base_addr=fields[1],
            a_data_addr=fields[2],
            b_col_ind_addr=fields[3],
            b_data_addr=fields[4],
            roll_counter_addr=fields[5],
            a_row_ids=tuple(fields[6:10]),
            lane_mask_a=masks & 0xF,
            lane_mask_b=(masks >> 4) & 0xF,
        )
    fields = struct.unpack(_MMH8_FMT, buf)
    return Mmh4Instruction(
        base_addr=fields[1],
        a_data_addr=fields[2],
        b_col_ind_addr=fields[3],
        b_data_addr=fields[4],
        roll_counter_addr=fields[5],
        a_row_ids=tuple(fields[6:14]),
        lane_mask_a=fields[14],
        lane_mask_b=fields[15],
    )


@dataclass(frozen=True)
class StreamMeta:
    """Workload facts the engine needs beyond the raw records."""

    n_rows: int
    n_cols: int
    mmh_width: int


_HEADER_FMT = "<4sBBIIQ"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)


def write_stream(path: str, instructions: list[Mmh4Instruction], meta: StreamMeta) -> None:
    """Write header, packed multiply records, and the terminator marker."""
    with open(path, "wb") as f:
        f.write(
            struct.pack(
                _HEADER_FMT,
                STREAM_MAGIC,
                STREAM_VERSION,
                meta.mmh_width,
                meta.n_rows,
                meta.n_cols,
                len(instructions),
            )
        )
        for instr in instructions:
            f.write(encode(instr))
        f.write(bytes([OPCODE_END]))


def read_stream(path: str) -> tuple[StreamMeta, list[Mmh4Instruction]]:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER_SIZE:
        raise IsaError("stream file too short for header")
    magic, version, width, n_rows, n_cols, count = struct.unpack_from(_HEADER_FMT, blob, 0)
    if magic != STREAM_MAGIC:
        raise IsaError("bad stream magic")
    if version != STREAM_VERSION:
        raise IsaError(f"unsupported stream version {version}")
    pos = _HEADER_SIZE
    out: list[Mmh4Instruction] = []
    for _ in range(count):
        if pos >= len(blob):
            raise IsaError("stream truncated mid-record")
        size = record_size(blob[pos])
        if pos + size > len(blob):
            raise IsaError("stream truncated mid-record")
        instr = decode(blob[pos : pos + size])
        if not isinstance(instr, Mmh4Instruction):
            raise IsaError("stream may only hold multiply records")
        out.append(instr)
        pos += size
    if pos >= len(blob) or blob[pos] != OPCODE_END:
        raise IsaError("missing stream terminator")
    return StreamMeta(n_rows, n_cols, width), out
