import random

import pytest

from mmhsim.accmem import (
    AccMem,
    HaccOutcome,
    HashPad,
    IntegrityError,
)


class TestHashPadBasics:
    def test_insert_then_accumulate_then_evict(self):
        pad = HashPad(64, 1, 1)
        out, _, _, _, _ = pad.execute_hacc(7, 2.5, 1)
        assert out is HaccOutcome.INSERTED
        assert pad.occupancy == 1
        out, etag, evalue, _, _ = pad.execute_hacc(7, 1.5, 1)
        assert out is HaccOutcome.EVICTED
        assert (etag, evalue) == (7, 4.0)
        assert pad.occupancy == 0
        assert pad.evictions == 1

    def test_singleton_counter_zero_evicts_immediately(self):
        pad = HashPad(64, 1, 1)
        out, etag, evalue, _, _ = pad.execute_hacc(3, 9.0, 0)
        assert out is HaccOutcome.EVICTED
        assert (etag, evalue) == (3, 9.0)
        assert pad.occupancy == 0

    def test_collision_probes_to_next_slot(self):
        pad = HashPad(64, 1, 1)
        # find two tags with the same home index
        base = pad.home_index(1)
        other = next(t for t in range(2, 10000) if pad.home_index(t) == base)
        pad.execute_hacc(1, 1.0, 5)
        out, _, _, _, examined = pad.execute_hacc(other, 2.0, 5)
        assert out is HaccOutcome.INSERTED
        assert pad.tags[(base + 1) % 64] == other
        assert examined == 2

    def test_stall_when_walk_window_full(self):
        pad = HashPad(8, 1, 1)  # walk limit = 8
        filled = 0
        t = 0
        while filled < 8:
            out, *_ = pad.execute_hacc(t, 1.0, 9)
            if out is HaccOutcome.INSERTED:
                filled += 1
            t += 1
        out, *_ = pad.execute_hacc(t + 1, 1.0, 9)
        assert out is HaccOutcome.STALLED
        assert pad.stall_events == 1

    def test_match_beats_earlier_empty_slot(self):
        # displaced line must keep receiving contributions after its home
        # slot reopens, otherwise the tag would split across two lines
        pad = HashPad(64, 1, 1)
        base = pad.home_index(1)
        other = next(t for t in range(2, 10000) if pad.home_index(t) == base)
        pad.execute_hacc(1, 1.0, 1)          # occupies home
        pad.execute_hacc(other, 2.0, 2)      # displaced to home+1
        pad.execute_hacc(1, 1.0, 1)          # evicts tag 1, home reopens
        out, *_ = pad.execute_hacc(other, 3.0, 2)
        assert out is HaccOutcome.ACCUMULATED
        assert pad.occupancy == 1
        out, etag, evalue, _, _ = pad.execute_hacc(other, 4.0, 2)
        assert out is HaccOutcome.EVICTED
        assert (etag, evalue) == (other, 9.0)

    def test_engines_partition_by_low_index_bits(self):
        pad = HashPad(64, 4, 2)
        for t in range(200):
            assert pad.engine_of(t) == pad.home_index(t) & 3


class TestEvictionModes:
    def test_barrier_holds_completed_lines(self):
        pad = HashPad(64, 1, 1, rolling=False)
        pad.execute_hacc(5, 2.0, 1)
        out, *_ = pad.execute_hacc(5, 3.0, 1)
        assert out is HaccOutcome.ACCUMULATED  # complete but held
        assert pad.occupancy == 1
        assert pad.completed_count == 1
        evicted = pad.barrier_flush()
        assert [(t, v) for t, v, _ in evicted] == [(5, 5.0)]
        assert pad.occupancy == 0

    def test_identity_workload_flushes_at_single_barrier(self):
        pad = HashPad(64, 1, 1, rolling=False)
        for t in range(4):
            pad.execute_hacc(t, 1.0, 0)
        assert pad.completed_count == 4
        assert len(pad.barrier_flush()) == 4

    def test_rolling_barrier_flush_is_noop(self):
        pad = HashPad(64, 1, 1, rolling=True)
        for t in range(4):
            pad.execute_hacc(t, 1.0, 0)  # evicted immediately
        assert pad.barrier_flush() == []

    def test_uncompleted_lines_raise_at_end(self):
        pad = HashPad(64, 1, 1, rolling=False)
        pad.execute_hacc(5, 2.0, 3)
        pad.barrier_flush()
        with pytest.raises(IntegrityError):
            pad.assert_drained()


class TestExactlyOnce:
    def test_random_multiset_accumulates_exactly_once(self):
        rng = random.Random(4)
        pad = HashPad(256, 2, 4)
        mult = {tag: rng.randint(1, 6) for tag in rng.sample(range(10000), 60)}
        stream = [(tag, float(rng.randint(1, 9))) for tag, m in mult.items() for _ in range(m)]
        rng.shuffle(stream)
        sums: dict[int, float] = {}
        for tag, value in stream:
            sums[tag] = sums.get(tag, 0.0) + value
        evicted = {}
        backlog = [(tag, v) for tag, v in stream]
        guard = 0
        while backlog and guard < 100000:
            guard += 1
            tag, value = backlog.pop(0)
            out, etag, evalue, _, _ = pad.execute_hacc(tag, value, mult[tag] - 1)
            if out is HaccOutcome.STALLED:
                backlog.append((tag, value))
            elif out is HaccOutcome.EVICTED:
                assert etag not in evicted
                evicted[etag] = evalue
        assert pad.occupancy == 0
        assert evicted.keys() == sums.keys()
        for tag, v in sums.items():
            assert evicted[tag] == v
        assert pad.inserts == len(mult)
        assert pad.evictions == len(mult)

    def test_occupancy_bounds(self):
        pad = HashPad(16, 1, 1)
        for t in range(12):
            pad.execute_hacc(t, 1.0, 5)
        assert pad.occupancy <= 16
        assert pad.peak_occupancy == pad.occupancy


class TestAccMemComponent:
    class FakeNet:
        def __init__(self):
            self.sent = []

        def ingress_space(self, comp_id):
            return 8

        def inject(self, comp_id, pkt, cycle):
            self.sent.append((cycle, pkt))

    def make_mem(self, rolling=True):
        mem = AccMem(
            comp_id=0, idx=0, n_lines=64, n_engines=2, comparators=1,
            rolling=rolling, ports=4, fifo_depth=8,
        )
        mem.mc_of_addr = lambda addr: 99
        mem.output_addr_of_tag = lambda tag: tag * 8
        return mem

    def test_writeback_address_uses_tag(self):
        from mmhsim.noc import K_HACC, Packet

        mem = self.make_mem()
        net = self.FakeNet()
        pkt = Packet(K_HACC, 1, 0, (6, 5.0, 0, 1))
        mem.deliver(pkt)
        for cycle in range(1, 10):
            mem.compute(cycle, net)
            mem.commit(cycle, net)
        assert len(net.sent) == 1
        wb = net.sent[0][1]
        assert wb.dst == 99
        assert wb.payload == (48, 5.0)

    def test_one_hacc_per_engine_per_cycle(self):
        from mmhsim.noc import K_HACC, Packet

        mem = self.make_mem()
        net = self.FakeNet()
        pad = mem.pad
        # two tags on the same engine, one on the other
        t_eng0 = [t for t in range(100) if pad.engine_of(t) == 0][:2]
        t_eng1 = [t for t in range(100) if pad.engine_of(t) == 1][:1]
        for t in t_eng0 + t_eng1:
            mem.deliver(Packet(K_HACC, 1, 0, (t, 1.0, 1, 1)))
        mem.compute(1, net)
        mem.commit(1, net)
        assert mem.absorbed == 2  # one per engine
        mem.compute(2, net)
        mem.commit(2, net)
        assert mem.absorbed == 3
