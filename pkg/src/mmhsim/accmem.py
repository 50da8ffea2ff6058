"""Accumulation engine: hash engines over a pad of tag/data/counter lines.

Each accumulate instruction indexes the pad with a multiplicative hash of
its tag.  An empty slot takes the instruction's tag, data, and counter; a
matching slot adds the data and decrements the counter; a mismatched slot
triggers a linear probe walk (stride = engine count, so a walk stays in
one engine's bank).  The walk is bounded by WALK_LIMIT slots; the number
of comparators only sets how many slots one engine examines per cycle, so
a long walk costs extra engine-busy cycles rather than failing.  A walk
that finds neither a match nor a free slot stalls the instruction, which
retries from its port buffer (the pad-full backpressure case).

A counter at zero means every contribution has arrived: under rolling
eviction the line leaves immediately, under barrier eviction it is only
marked complete and leaves at the next barrier flush.  The pad never
displaces an occupied line.
"""

from __future__ import annotations

import enum
from collections import deque

from .noc import K_WRITE, Packet

HASH_MULTIPLIER = 0x9E3779B1  # odd 32-bit constant for multiplicative hashing
MASK32 = 0xFFFFFFFF

EMPTY = -1
WALK_LIMIT = 64  # slots a collision walk may examine before stalling


class HaccOutcome(enum.Enum):
    INSERTED = "inserted"
    ACCUMULATED = "accumulated"
    EVICTED = "evicted"
    STALLED = "stalled"


class IntegrityError(RuntimeError):
    """Partial products were lost: uncompleted lines at end of workload."""


class EvictionPolicy(enum.Enum):
    ROLLING = "rolling"
    BARRIER = "barrier"


class HashPad:
    """The line array plus hashing, probing, and eviction bookkeeping."""

    __slots__ = (
        "n_lines", "n_engines", "comparators", "walk_limit", "rolling", "shift",
        "tags", "data", "counters", "complete", "stamps", "bank_depth",
        "occupancy", "peak_occupancy", "completed_count",
        "inserts", "accumulates", "evictions", "stall_events",
    )

    def __init__(self, n_lines: int, n_engines: int, comparators: int, rolling: bool = True):
        if n_lines & (n_lines - 1):
            raise ValueError("line count must be a power of two")
        self.n_lines = n_lines
        self.n_engines = n_engines
        self.comparators = comparators
        self.walk_limit = min(WALK_LIMIT, n_lines // n_engines)
        self.rolling = rolling
        # deepest probe depth ever inserted per bank: no match can live
        # beyond it, so lookups may stop early
        self.bank_depth = [0] * n_engines
        self.shift = 32 - (n_lines.bit_length() - 1)
        self.tags = [EMPTY] * n_lines
        self.data = [0.0] * n_lines
        self.counters = [0] * n_lines
        self.complete = [False] * n_lines
        self.stamps = [0] * n_lines  # creation cycle of the completing instruction
        self.occupancy = 0
        self.peak_occupancy = 0
        self.completed_count = 0
        self.inserts = 0
        self.accumulates = 0
        self.evictions = 0
        self.stall_events = 0

    def home_index(self, tag: int) -> int:
        return ((tag * HASH_MULTIPLIER) & MASK32) >> self.shift

    def engine_of(self, tag: int) -> int:
        return self.home_index(tag) & (self.n_engines - 1)

    def execute_hacc(self, tag: int, data: float, counter: int, stamp: int = 0):
        """Apply one accumulate instruction.

        The walk checks every slot up to the first match, remembering the
        first free slot on the way; a match beats an earlier free slot.
        Without that rule a rolling eviction could reopen a home slot in
        front of a displaced line and split one tag across two lines.

        Returns (outcome, evicted_tag, evicted_value, evicted_stamp,
        slots_examined); the eviction fields are meaningful only for the
        EVICTED outcome, and slots_examined prices the engine time.
        """
        home = self.home_index(tag)
        step = self.n_engines
        n = self.n_lines
        tags = self.tags
        bank = home & (step - 1)
        max_depth = self.bank_depth[bank]
        idx = home
        match = -1
        first_empty = -1
        examined = 0
        depth = -1
        for step_i in range(self.walk_limit):
            examined += 1
            slot_tag = tags[idx]
            if slot_tag == tag:
                match = idx
                break
            if slot_tag == EMPTY:
                if first_empty < 0:
                    first_empty = idx
                    depth = step_i
                if step_i >= max_depth:
                    break  # nothing can live deeper and a free slot is known
            elif step_i >= max_depth and first_empty >= 0:
                break
            idx = (idx + step) % n
        if match >= 0:
            self.data[match] += data
            self.counters[match] -= 1
            self.accumulates += 1
            if self.counters[match] == 0:
                if self.rolling:
                    value = self.data[match]
                    tags[match] = EMPTY
                    self.occupancy -= 1
                    self.evictions += 1
                    return HaccOutcome.EVICTED, tag, value, stamp, examined
                self.complete[match] = True
                self.stamps[match] = stamp
                self.completed_count += 1
            return HaccOutcome.ACCUMULATED, 0, 0.0, 0, examined
        if first_empty >= 0:
            idx = first_empty
            if depth > max_depth:
                self.bank_depth[bank] = depth
            if counter == 0:
                # single-contribution output: no accumulation needed
                if self.rolling:
                    self.inserts += 1
                    self.evictions += 1
                    return HaccOutcome.EVICTED, tag, data, stamp, examined
                self.complete[idx] = True
                self.completed_count += 1
            self.tags[idx] = tag
            self.data[idx] = data
            self.counters[idx] = counter
            self.stamps[idx] = stamp
            self.occupancy += 1
            if self.occupancy > self.peak_occupancy:
                self.peak_occupancy = self.occupancy
            self.inserts += 1
            return HaccOutcome.INSERTED, 0, 0.0, 0, examined
        self.stall_events += 1
        return HaccOutcome.STALLED, 0, 0.0, 0, examined

    def barrier_flush(self) -> list[tuple[int, float, int]]:
        """Evict every completed line; a no-op under rolling eviction."""
        if self.completed_count == 0:
            return []
        out = []
        for idx in range(self.n_lines):
            if self.tags[idx] != EMPTY and self.complete[idx]:
                out.append((self.tags[idx], self.data[idx], self.stamps[idx]))
                self.tags[idx] = EMPTY
                self.complete[idx] = False
                self.occupancy -= 1
                self.evictions += 1
        self.completed_count = 0
        return out

    def flush_some(self, limit: int) -> list[tuple[int, float, int]]:
        """Evict up to `limit` completed lines (staged barrier drain)."""
        if self.completed_count == 0 or limit <= 0:
            return []
        out = []
        for idx in range(self.n_lines):
            if self.tags[idx] != EMPTY and self.complete[idx]:
                out.append((self.tags[idx], self.data[idx], self.stamps[idx]))
                self.tags[idx] = EMPTY
                self.complete[idx] = False
                self.occupancy -= 1
                self.evictions += 1
                self.completed_count -= 1
                if len(out) >= limit:
                    break
        return out

    def assert_drained(self) -> None:
        if self.occupancy:
            incomplete = sum(
                1 for i in range(self.n_lines) if self.tags[i] != EMPTY and not self.complete[i]
            )
            raise IntegrityError(
                f"{self.occupancy} hash lines still occupied at end of workload "
                f"({incomplete} with outstanding contributions)"
            )


class AccMem:
    """One accumulation unit: port buffers feeding hash engines over a pad."""

    __slots__ = (
        "comp_id", "idx", "pad", "fifos", "fifo_depth", "ports", "width",
        "outbox", "flush_pending", "mc_of_addr", "output_addr_of_tag",
        "hacc_cpi", "absorbed", "engine_free_at", "busy_until",
        "busy_cycles", "stall_cycles", "idle_cycles",
        "_pops", "_rotations", "_outbox_send", "_did_work", "_rotated",
    )

    def __init__(
        self,
        comp_id: int,
        idx: int,
        n_lines: int,
        n_engines: int,
        comparators: int,
        rolling: bool,
        ports: int,
        fifo_depth: int,
    ):
        self.comp_id = comp_id
        self.idx = idx
        self.pad = HashPad(n_lines, n_engines, comparators, rolling)
        self.fifos: list[deque[Packet]] = [deque() for _ in range(ports)]
        self.fifo_depth = fifo_depth
        self.ports = ports
        self.width = ports  # deliveries accepted per cycle (sink protocol)
        self.outbox: deque[Packet] = deque()
        self.flush_pending = False
        self.mc_of_addr = None  # wired by the engine
        self.output_addr_of_tag = None
        self.hacc_cpi: list[int] = []
        self.absorbed = 0
        self.engine_free_at = [0] * n_engines
        self.busy_until = 0
        self.busy_cycles = 0
        self.stall_cycles = 0
        self.idle_cycles = 0
        self._pops = [0] * ports
        self._rotations = [False] * ports
        self._outbox_send = 0
        self._did_work = False
        self._rotated = False

    # -- sink protocol ----------------------------------------------------

    def space(self) -> int:
        return sum(self.fifo_depth - len(f) for f in self.fifos)

    def deliver(self, pkt: Packet) -> None:
        """Place an arriving packet in the shortest port buffer."""
        best = min(range(self.ports), key=lambda i: (len(self.fifos[i]), i))
        self.fifos[best].append(pkt)

    # -- cycle ------------------------------------------------------------

    def _queue_eviction(self, tag: int, value: float, stamp: int, cycle: int) -> None:
        addr = self.output_addr_of_tag(tag)
        self.outbox.append(Packet(K_WRITE, self.comp_id, self.mc_of_addr(addr), (addr, value)))
        self.hacc_cpi.append(cycle - stamp)

    def compute(self, cycle: int, net) -> bool:
        if not (self.outbox or self.flush_pending or any(self.fifos)):
            self.idle_cycles += 1
            self._did_work = False
            self._rotated = False
            return False
        pad = self.pad
        comparators = pad.comparators
        did_work = False
        rotated = False
        for i, fifo in enumerate(self.fifos):
            self._pops[i] = 0
            self._rotations[i] = False
            if not fifo:
                continue
            pkt = fifo[0]
            tag, data, counter, _src_core = pkt.payload
            engine = pad.engine_of(tag)
            if self.engine_free_at[engine] > cycle:
                continue  # engine mid-walk from an earlier instruction
            outcome, etag, evalue, estamp, examined = pad.execute_hacc(
                tag, data, counter, pkt.created
            )
            walk_cycles = -(-examined // comparators)  # ceil
            self.engine_free_at[engine] = cycle + walk_cycles
            if self.busy_until < cycle + walk_cycles:
                self.busy_until = cycle + walk_cycles
            if outcome is HaccOutcome.STALLED:
                # retry later; rotate so packets behind it can progress
                self._rotations[i] = True
                rotated = True
                continue
            self._pops[i] = 1
            self.absorbed += 1
            did_work = True
            if outcome is HaccOutcome.EVICTED:
                self._queue_eviction(etag, evalue, estamp, cycle)
            else:
                self.hacc_cpi.append(cycle - pkt.created)

        if self.flush_pending:
            evicted = pad.flush_some(pad.n_engines)
            for tag, value, stamp in evicted:
                self._queue_eviction(tag, value, stamp, cycle)
            if evicted:
                did_work = True
            if pad.completed_count == 0:
                self.flush_pending = False

        send = min(len(self.outbox), self.ports, net.ingress_space(self.comp_id))
        self._outbox_send = send
        if send:
            did_work = True

        self._did_work = did_work
        self._rotated = rotated
        if did_work:
            self.busy_cycles += 1
        else:
            self.stall_cycles += 1
        return did_work

    def commit(self, cycle: int, net) -> None:
        for i, fifo in enumerate(self.fifos):
            if self._pops[i]:
                fifo.popleft()
                self._pops[i] = 0
            elif self._rotations[i]:
                fifo.append(fifo.popleft())
                self._rotations[i] = False
        for _ in range(self._outbox_send):
            net.inject(self.comp_id, self.outbox.popleft(), cycle)
        self._outbox_send = 0

    def pending(self) -> bool:
        return bool(self.outbox or self.flush_pending or self.pad.occupancy or any(self.fifos))
