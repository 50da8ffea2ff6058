import random

import pytest

from mmhsim.isa import (
    HACC_SIZE,
    MMH4_SIZE,
    MMH8_SIZE,
    OPCODE_END,
    OPCODE_HACC,
    OPCODE_MMH4,
    HaccInstruction,
    IsaError,
    Mmh4Instruction,
    StreamMeta,
    decode,
    encode,
    read_stream,
    write_stream,
)


def random_mmh(rng, width=4):
    slots = 4 if width <= 4 else 8
    full = (1 << width) - 1
    return Mmh4Instruction(
        base_addr=rng.randrange(1 << 32),
        a_data_addr=rng.randrange(1 << 32),
        b_col_ind_addr=rng.randrange(1 << 32),
        b_data_addr=rng.randrange(1 << 32),
        roll_counter_addr=rng.randrange(1 << 32),
        a_row_ids=tuple(rng.randrange(1 << 32) for _ in range(slots)),
        lane_mask_a=rng.randrange(1, full + 1),
        lane_mask_b=rng.randrange(1, full + 1),
    )


def random_hacc(rng):
    return HaccInstruction(
        tag=rng.randrange(1 << 32),
        data=float(rng.randint(-1000, 1000)),
        counter=rng.randrange(1 << 16),
    )


class TestEncoding:
    def test_zero_hacc_is_15_bytes_payload_zero(self):
        buf = encode(HaccInstruction(tag=0, data=0.0, counter=0))
        assert len(buf) == HACC_SIZE
        assert buf[0] == OPCODE_HACC
        assert all(b == 0 for b in buf[1:])

    def test_mmh4_base_addr_little_endian(self):
        instr = Mmh4Instruction(
            base_addr=0x10,
            a_data_addr=0,
            b_col_ind_addr=0,
            b_data_addr=0,
            roll_counter_addr=0,
            a_row_ids=(0, 0, 0, 0),
            lane_mask_a=0x1,
            lane_mask_b=0x1,
        )
        buf = encode(instr)
        assert len(buf) == MMH4_SIZE
        assert buf[0] == OPCODE_MMH4
        assert buf[1:5] == bytes([0x10, 0x00, 0x00, 0x00])

    def test_round_trip_1000_random(self):
        rng = random.Random(2024)
        for trial in range(1000):
            pick = rng.random()
            if pick < 0.4:
                instr = random_hacc(rng)
            elif pick < 0.8:
                instr = random_mmh(rng, 4)
            else:
                instr = random_mmh(rng, 8)
            assert decode(encode(instr)) == instr

    def test_wide_record_size(self):
        rng = random.Random(1)
        assert len(encode(random_mmh(rng, 8))) == MMH8_SIZE

    def test_narrow_widths_share_the_standard_record(self):
        instr = Mmh4Instruction(
            base_addr=0,
            a_data_addr=8,
            b_col_ind_addr=16,
            b_data_addr=24,
            roll_counter_addr=32,
            a_row_ids=(5, 0, 0, 0),
            lane_mask_a=0x1,
            lane_mask_b=0x3,
        )
        assert len(encode(instr)) == MMH4_SIZE
        assert decode(encode(instr)) == instr

    def test_hacc_count_is_mask_popcount_product(self):
        rng = random.Random(77)
        for trial in range(100):
            instr = random_mmh(rng)
            pa = bin(instr.lane_mask_a).count("1")
            pb = bin(instr.lane_mask_b).count("1")
            assert instr.hacc_count == pa * pb
            assert instr.hacc_count <= 16


class TestDecodeErrors:
    def test_unknown_opcode(self):
        with pytest.raises(IsaError):
            decode(bytes([0x7E]) + bytes(14))

    def test_short_buffer(self):
        good = encode(HaccInstruction(tag=1, data=1.0, counter=0))
        with pytest.raises(IsaError):
            decode(good[:-1])

    def test_empty_buffer(self):
        with pytest.raises(IsaError):
            decode(b"")

    def test_empty_mask_rejected_on_encode(self):
        instr = Mmh4Instruction(0, 0, 0, 0, 0, (0, 0, 0, 0), 0, 1)
        with pytest.raises(IsaError):
            encode(instr)


class TestStreamFile:
    def test_round_trip_with_terminator(self, tmp_path):
        rng = random.Random(5)
        instrs = [random_mmh(rng) for _ in range(20)]
        path = str(tmp_path / "w.mmhs")
        write_stream(path, instrs, StreamMeta(16, 16, 4))
        with open(path, "rb") as f:
            blob = f.read()
        assert blob[-1] == OPCODE_END
        meta, back = read_stream(path)
        assert back == instrs
        assert (meta.n_rows, meta.n_cols, meta.mmh_width) == (16, 16, 4)

    def test_truncated_stream_detected(self, tmp_path):
        rng = random.Random(6)
        path = str(tmp_path / "w.mmhs")
        write_stream(path, [random_mmh(rng)], StreamMeta(4, 4, 4))
        with open(path, "rb") as f:
            blob = f.read()
        with open(path, "wb") as f:
            f.write(blob[:-2])
        with pytest.raises(IsaError):
            read_stream(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.mmhs"
        path.write_bytes(b"XXXX" + bytes(60))
        with pytest.raises(IsaError):
            read_stream(str(path))
