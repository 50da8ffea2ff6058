import pytest

from mmhsim.memsys import MemoryController, SimulationFault
from mmhsim.noc import K_READ, K_RESP, K_WRITE, Packet, Sink


class FakeNet:
    """Records injections; always reports ingress space."""

    def __init__(self):
        self.sent = []

    def ingress_space(self, comp_id):
        return 8

    def inject(self, comp_id, pkt, cycle):
        self.sent.append((cycle, pkt))


def make_mc(bandwidth=16, base_latency=32, max_inflight=8, cache_lines=256, image_size=1 << 20):
    mc = MemoryController(
        comp_id=0,
        idx=0,
        image_size=image_size,
        line_bytes=64,
        coalesce_window=16,
        bandwidth=bandwidth,
        base_latency=base_latency,
        max_inflight=max_inflight,
        read_capacity=32,
        write_capacity=32,
        cache_lines=cache_lines,
        cache_hit_latency=8,
    )
    mc.sink = Sink(16, 4)
    return mc


def read_pkt(req_id, line_addr, requester=5):
    pkt = Packet(K_READ, requester, 0, (req_id, requester, line_addr))
    return pkt


def run_until_drained(mc, net, max_cycles=500):
    cycle = 0
    while mc.pending() and cycle < max_cycles:
        cycle += 1
        mc.compute(cycle, net)
        mc.commit(cycle, net)
    return cycle


class TestCoalescing:
    def test_four_same_line_reads_one_transaction(self):
        mc = make_mc()
        net = FakeNet()
        for i in range(4):
            mc.sink.deliver(read_pkt(i, 0))
        run_until_drained(mc, net)
        # one channel transaction served all four requesters
        assert mc.served_bytes == 64
        assert len(net.sent) == 4
        completions = {pkt.payload[0]: c for c, pkt in net.sent}
        assert len(set(completions.values())) == 1  # same completion cycle

    def test_distinct_lines_with_inflight_one_serialize(self):
        mc = make_mc(max_inflight=1)
        net = FakeNet()
        mc.sink.deliver(read_pkt(0, 0))
        mc.sink.deliver(read_pkt(1, 64))
        run_until_drained(mc, net)
        c0 = min(c for c, p in net.sent if p.payload[0] == 0)
        c1 = min(c for c, p in net.sent if p.payload[0] == 1)
        service = 64 // 16
        assert abs(c1 - c0) >= service

    def test_adjacent_line_preference(self):
        mc = make_mc(max_inflight=1)
        net = FakeNet()
        # arrival order: line 5, line 1, line 2; after serving line 1 the
        # controller prefers line 2 over the older line 5
        mc.sink.deliver(read_pkt(0, 1 * 64))
        mc.sink.deliver(read_pkt(1, 5 * 64))
        mc.sink.deliver(read_pkt(2, 2 * 64))
        mc.compute(1, net)
        mc.commit(1, net)
        issued = []
        cycle = 1
        while mc.pending() and cycle < 300:
            cycle += 1
            before = len(mc.inflight)
            mc.compute(cycle, net)
            for txn in mc.inflight[before - len(mc.inflight):]:
                pass
            mc.commit(cycle, net)
        # reconstruct issue order from last_line history is awkward; check
        # the completion order of requesters instead
        order = [p.payload[0] for _, p in sorted(net.sent)]
        assert order.index(2) < order.index(1)

    def test_saturation_respects_bandwidth_ceiling(self):
        mc = make_mc(bandwidth=16, base_latency=4, max_inflight=64, cache_lines=1)
        net = FakeNet()
        cycle = 0
        issued_total = 0
        for cycle in range(1, 401):
            if cycle < 300:
                for k in range(4):
                    if mc.sink.space() > 0:
                        mc.sink.deliver(read_pkt(cycle * 8 + k, ((cycle * 7 + k * 3) % 4096) * 64))
            mc.compute(cycle, net)
            mc.commit(cycle, net)
        assert mc.served_bytes <= 16 * cycle + 64


class TestCache:
    def test_second_read_hits(self):
        mc = make_mc()
        net = FakeNet()
        mc.sink.deliver(read_pkt(0, 0))
        run_until_drained(mc, net)
        assert mc.cache_misses == 1
        mc.sink.deliver(read_pkt(1, 0))
        run_until_drained(mc, net)
        assert mc.cache_hits == 1
        assert mc.served_bytes == 64  # no second channel transaction

    def test_inflight_miss_merges(self):
        mc = make_mc()
        net = FakeNet()
        mc.sink.deliver(read_pkt(0, 0))
        mc.compute(1, net)
        mc.commit(1, net)
        mc.compute(2, net)
        mc.commit(2, net)
        mc.sink.deliver(read_pkt(1, 0))  # while the fill is in flight
        run_until_drained(mc, net)
        assert mc.mshr_merges == 1
        assert mc.served_bytes == 64
        assert len(net.sent) == 2


class TestWrites:
    def test_write_lands_once(self):
        mc = make_mc()
        net = FakeNet()
        mc.sink.deliver(Packet(K_WRITE, 9, 0, (128, 7.5)))
        run_until_drained(mc, net)
        assert mc.writes == [(128, 7.5)]
        assert mc.writes_done == 1

    def test_reads_before_writes(self):
        mc = make_mc(max_inflight=1)
        net = FakeNet()
        mc.sink.deliver(Packet(K_WRITE, 9, 0, (0, 1.0)))
        mc.sink.deliver(read_pkt(0, 64))
        mc.compute(1, net)
        mc.commit(1, net)
        mc.compute(2, net)
        assert mc.inflight and mc.inflight[0][1] is True  # read issued first


class TestFaults:
    def test_read_outside_image(self):
        mc = make_mc(image_size=128)
        net = FakeNet()
        mc.sink.deliver(read_pkt(0, 4096))
        with pytest.raises(SimulationFault):
            mc.compute(1, net)

    def test_write_outside_image(self):
        mc = make_mc(image_size=128)
        net = FakeNet()
        mc.sink.deliver(Packet(K_WRITE, 9, 0, (1 << 30, 1.0)))
        with pytest.raises(SimulationFault):
            mc.compute(1, net)

    def test_every_read_answered_exactly_once(self):
        mc = make_mc()
        net = FakeNet()
        for i in range(40):
            mc.sink.deliver(read_pkt(i, (i % 7) * 64))
        run_until_drained(mc, net)
        answered = sorted(p.payload[0] for _, p in net.sent if p.kind == K_RESP)
        assert answered == list(range(40))
