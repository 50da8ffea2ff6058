"""Per-tile memory controller over a parametric channel model.

Requests arrive as packets, pass a memory-side line cache, and the misses
wait in bounded read/write queues coalesced per 64-byte line.  A
transaction occupies the channel for ceil(line/bandwidth) cycles and
completes base_latency later; at most max_inflight transactions may be
outstanding.  Line selection prefers the line adjacent to the last issued
one (ascending first), then the oldest buffered request, reads before
writes.  Adjacency preference yields to the oldest line once its head
request has aged past AGING_LIMIT cycles, so spatial reordering cannot
starve a line indefinitely.

The line cache is direct-mapped and read-only (input operands are never
written during a run; writebacks go straight to the channel), so no
coherence traffic is modeled.
"""

from __future__ import annotations

from collections import deque

from .noc import K_READ, K_RESP, K_WRITE, Packet


class SimulationFault(RuntimeError):
    """A request touched an address outside the memory image."""


AGING_LIMIT = 64  # cycles an oldest line may be bypassed by adjacency

_TO_READS, _TO_WRITES, _TO_HITS = 0, 1, 2


class MemoryController:
    __slots__ = (
        "comp_id", "idx", "image_size", "image_line_end", "line_bytes", "coalesce_window",
        "bandwidth", "base_latency", "max_inflight", "read_q_cap", "write_q_cap",
        "read_q", "write_q", "inflight", "open_reads", "channel_free_at", "last_line",
        "cache", "cache_lines", "cache_hit_latency", "hit_queue", "cache_hits", "cache_misses",
        "mshr_merges",
        "served_bytes", "writes", "writes_done", "outbox", "sink", "ports",
        "busy_cycles", "stall_cycles", "idle_cycles",
        "_ingest_plan", "_outbox_send", "_did_work",
    )

    def __init__(
        self,
        comp_id: int,
        idx: int,
        image_size: int,
        line_bytes: int,
        coalesce_window: int,
        bandwidth: int,
        base_latency: int,
        max_inflight: int,
        read_capacity: int,
        write_capacity: int,
        cache_lines: int = 256,
        cache_hit_latency: int = 8,
        ports: int = 4,
    ):
        self.comp_id = comp_id
        self.idx = idx
        self.image_size = image_size
        self.image_line_end = (image_size + line_bytes - 1) // line_bytes * line_bytes
        self.line_bytes = line_bytes
        self.coalesce_window = coalesce_window
        self.bandwidth = bandwidth
        self.base_latency = base_latency
        self.max_inflight = max_inflight
        self.read_q_cap = read_capacity
        self.write_q_cap = write_capacity
        self.read_q: list[Packet] = []
        self.write_q: list[Packet] = []
        # inflight entries: [complete_cycle, is_read, line, requests]
        self.inflight: list[list] = []
        self.open_reads: dict[int, list] = {}  # line -> inflight read txn
        self.channel_free_at = 0
        self.last_line = -2
        self.cache = [-1] * cache_lines
        self.cache_lines = cache_lines
        self.cache_hit_latency = cache_hit_latency
        self.hit_queue: list[list] = []  # [ready_cycle, packet]
        self.cache_hits = 0
        self.cache_misses = 0
        self.mshr_merges = 0
        self.served_bytes = 0
        self.writes: list[tuple[int, float]] = []
        self.writes_done = 0
        self.outbox: deque[Packet] = deque()
        self.sink = None  # wired by the engine
        self.ports = ports
        self.busy_cycles = 0
        self.stall_cycles = 0
        self.idle_cycles = 0
        self._ingest_plan: list[int] = []
        self._outbox_send = 0
        self._did_work = False

    def _line_of(self, addr: int) -> int:
        return addr // self.line_bytes

    def _pick_line(self, queue: list[Packet], is_read: bool, cycle: int):
        """Choose the next line to service: adjacent to the last issued
        line if buffered (ascending preferred), else the oldest request's.
        An oldest request past the aging limit overrides adjacency."""
        window = queue[: self.coalesce_window]
        lines = []
        seen = set()
        for pkt in window:
            addr = pkt.payload[2] if is_read else pkt.payload[0]
            line = self._line_of(addr)
            if line not in seen:
                seen.add(line)
                lines.append(line)
        if not lines:
            return None
        if cycle - queue[0].created > AGING_LIMIT:
            return lines[0]
        if self.last_line + 1 in seen:
            return self.last_line + 1
        if self.last_line - 1 in seen:
            return self.last_line - 1
        return lines[0]

    def _issue(self, cycle: int, queue: list[Packet], is_read: bool) -> bool:
        line = self._pick_line(queue, is_read, cycle)
        if line is None:
            return False
        window = self.coalesce_window
        group: list[Packet] = []
        kept: list[Packet] = []
        for i, pkt in enumerate(queue):
            if i < window:
                addr = pkt.payload[2] if is_read else pkt.payload[0]
                if self._line_of(addr) == line:
                    group.append(pkt)
                    continue
            kept.append(pkt)
        queue[:] = kept
        issue_at = max(cycle, self.channel_free_at)
        service = -(-self.line_bytes // self.bandwidth)  # ceil
        self.channel_free_at = issue_at + service
        done = issue_at + service + self.base_latency
        txn = [done, is_read, line, group]
        self.inflight.append(txn)
        if is_read:
            self.open_reads[line] = txn
        self.last_line = line
        return True

    def compute(self, cycle: int, net) -> bool:
        if not (self.sink.inbox or self.read_q or self.write_q or self.inflight
                or self.outbox or self.hit_queue):
            self.idle_cycles += 1
            return False
        did_work = False

        # channel transaction completions: fill the cache, answer readers
        still = []
        for txn in self.inflight:
            if txn[0] <= cycle:
                did_work = True
                self.served_bytes += self.line_bytes
                if txn[1]:
                    self.cache[txn[2] % self.cache_lines] = txn[2]
                    self.open_reads.pop(txn[2], None)
                    for pkt in txn[3]:
                        req_id, requester, _ = pkt.payload
                        self.outbox.append(Packet(K_RESP, self.comp_id, requester, (req_id,)))
                else:
                    for pkt in txn[3]:
                        addr, value = pkt.payload
                        self.writes.append((addr, value))
                        self.writes_done += 1
            else:
                still.append(txn)
        self.inflight[:] = still

        # cache-hit completions
        if self.hit_queue:
            still_hits = []
            for entry in self.hit_queue:
                if entry[0] <= cycle:
                    did_work = True
                    pkt = entry[1]
                    req_id, requester, _ = pkt.payload
                    self.outbox.append(Packet(K_RESP, self.comp_id, requester, (req_id,)))
                else:
                    still_hits.append(entry)
            self.hit_queue[:] = still_hits

        # issue new transactions
        while len(self.inflight) < self.max_inflight:
            if self._issue(cycle, self.read_q, True):
                did_work = True
            elif self._issue(cycle, self.write_q, False):
                did_work = True
            else:
                break

        # plan ingestion from the inbox (strict FIFO; a full target queue
        # blocks the head and backpressures the network)
        self._ingest_plan.clear()
        taken_r = taken_w = 0
        for pkt in self.sink.inbox:
            if pkt.kind == K_READ:
                addr = pkt.payload[2]
                if addr < 0 or addr + self.line_bytes > self.image_line_end:
                    raise SimulationFault(
                        f"read at 0x{addr:x} outside the {self.image_size}-byte memory image"
                    )
                line = self._line_of(addr)
                if self.cache[line % self.cache_lines] == line:
                    self.cache_hits += 1
                    self.hit_queue.append([cycle + self.cache_hit_latency, pkt])
                    self._ingest_plan.append(_TO_HITS)
                elif line in self.open_reads:
                    # the fill is already scheduled; ride its completion
                    self.mshr_merges += 1
                    self.open_reads[line][3].append(pkt)
                    self._ingest_plan.append(_TO_HITS)
                else:
                    if len(self.read_q) + taken_r >= self.read_q_cap:
                        break
                    self.cache_misses += 1
                    taken_r += 1
                    self._ingest_plan.append(_TO_READS)
            else:
                if len(self.write_q) + taken_w >= self.write_q_cap:
                    break
                addr = pkt.payload[0]
                if addr < 0 or addr + 8 > self.image_size:
                    raise SimulationFault(
                        f"write at 0x{addr:x} outside the {self.image_size}-byte memory image"
                    )
                taken_w += 1
                self._ingest_plan.append(_TO_WRITES)
        if self._ingest_plan:
            did_work = True

        # plan response injection
        send = min(len(self.outbox), self.ports, net.ingress_space(self.comp_id))
        self._outbox_send = send
        if send:
            did_work = True

        self._did_work = did_work
        if did_work:
            self.busy_cycles += 1
        else:
            self.stall_cycles += 1
        return did_work

    def commit(self, cycle: int, net) -> None:
        for target in self._ingest_plan:
            pkt = self.sink.inbox.popleft()
            if target == _TO_READS:
                self.read_q.append(pkt)
            elif target == _TO_WRITES:
                self.write_q.append(pkt)
            # hits were queued during compute
        self._ingest_plan.clear()
        for _ in range(self._outbox_send):
            net.inject(self.comp_id, self.outbox.popleft(), cycle)
        self._outbox_send = 0

    def pending(self) -> bool:
        return bool(self.sink.inbox or self.read_q or self.write_q or self.inflight
                    or self.outbox or self.hit_queue)
