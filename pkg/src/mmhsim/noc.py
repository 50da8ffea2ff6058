"""2D-torus interconnect with bounded buffers and minimal adaptive routing.

The network advances in two phases per cycle so results never depend on
component iteration order (or thread count):

  phase A  every router peeks its buffer heads and plans at most one move
           per output link, reading only buffer lengths from the previous
           commit; nothing shared is mutated.
  phase B  the engine applies all plans in fixed router order: pops,
           forwards, deliveries to local endpoints, and new injections.

Each input buffer has exactly one writer (its upstream link or its local
source), so phase A capacity checks against committed lengths are exact.

Routing is minimal adaptive with an escape layer:

  adaptive layer   at most one candidate direction per dimension, the
                   shorter way around each ring (ties go the positive
                   way); among candidates the hop with the most free
                   downstream slots wins, equal slots prefer X.
  escape layer     strict X-then-Y dimension order.  A packet whose
                   adaptive candidates are all blocked falls over to the
                   escape buffer of its dimension-order hop and stays on
                   the escape layer to its destination.

Both layers use bubble flow control: continuing straight in the same
dimension and layer may fill the last downstream slot, while turning,
changing layer, or injecting must leave a bubble behind.  Escape rings
therefore always keep a free slot and, with X-then-Y order being acyclic
and every sink draining, the escape layer alone is deadlock-free; the
adaptive layer always drains into it, so the network as a whole cannot
deadlock.  An admission threshold additionally pauses injection whenever
the network holds more packets than a quarter of its directional buffer
capacity, keeping congestion away from the escape path in the common
case.
"""

from __future__ import annotations

from collections import deque

K_READ = 0
K_RESP = 1
K_WRITE = 2
K_HACC = 3

EAST, WEST, NORTH, SOUTH = 0, 1, 2, 3
_OPPOSITE = (WEST, EAST, SOUTH, NORTH)

# input-buffer layout per router: 4 adaptive, 4 escape, then locals
_ESCAPE_BASE = 4
_LOCAL_BASE = 8

_ACT_FORWARD_ADAPTIVE = 0
_ACT_FORWARD_ESCAPE = 1
_ACT_DELIVER = 2

LATENCY_SAMPLE_CAP = 256


class Packet:
    """One message in flight: a memory read/response, a writeback, or an
    accumulate instruction."""

    __slots__ = ("kind", "src", "dst", "payload", "created", "ready", "route_to", "min_cycles", "hops")

    def __init__(self, kind: int, src: int, dst: int, payload: tuple):
        self.kind = kind
        self.src = src
        self.dst = dst
        self.payload = payload
        self.created = 0
        self.ready = 0
        self.route_to = 0
        self.min_cycles = 0
        self.hops = 0


class Sink:
    """Delivery endpoint: a bounded inbox drained by its owning component."""

    __slots__ = ("inbox", "capacity", "width", "received")

    def __init__(self, capacity: int | None, width: int):
        self.inbox: deque[Packet] = deque()
        self.capacity = capacity
        self.width = width
        self.received = 0

    def space(self) -> int:
        if self.capacity is None:
            return 1 << 30
        return self.capacity - len(self.inbox)

    def deliver(self, pkt: Packet) -> None:
        self.inbox.append(pkt)
        self.received += 1


class Router:
    __slots__ = (
        "idx", "x", "y", "in_bufs", "neighbors", "intents", "forwarded_count", "occupancy",
    )

    def __init__(self, idx: int, x: int, y: int):
        self.idx = idx
        self.x = x
        self.y = y
        self.in_bufs: list[deque[Packet]] = [deque() for _ in range(_LOCAL_BASE)]
        # (neighbor router, index of our adaptive feed buffer at that neighbor)
        self.neighbors: list[tuple["Router", int]] = []
        self.intents: list[tuple[int, int, int]] = []
        self.forwarded_count = 0
        self.occupancy = 0

    def add_local_buffer(self) -> int:
        self.in_bufs.append(deque())
        return len(self.in_bufs) - 1


class TorusNetwork:
    """Fixed grid of routers plus the endpoint registry."""

    def __init__(self, width: int, height: int, buffer_depth: int, hop_latency: int = 1):
        self.width = width
        self.height = height
        self.depth = buffer_depth
        self.hop_latency = hop_latency
        self.routers = [Router(y * width + x, x, y) for y in range(height) for x in range(width)]
        for r in self.routers:
            east = self.routers[r.y * width + (r.x + 1) % width]
            west = self.routers[r.y * width + (r.x - 1) % width]
            north = self.routers[((r.y + 1) % height) * width + r.x]
            south = self.routers[((r.y - 1) % height) * width + r.x]
            # a packet we send east arrives at the east neighbor's WEST buffer
            r.neighbors = [(east, WEST), (west, EAST), (north, SOUTH), (south, NORTH)]
        self.sinks: dict[int, object] = {}
        self.sink_router: dict[int, int] = {}
        self.source_router: dict[int, int] = {}
        self.source_bufs: dict[int, list[tuple[Router, int]]] = {}
        self.soft_cap = max(8, (4 * buffer_depth * len(self.routers)) // 4)
        self.injected = 0
        self.delivered = 0
        self.in_flight = 0
        self.escape_hops = 0
        self.latency_samples: list[tuple[int, int]] = []

    # -- wiring ---------------------------------------------------------

    def register_sink(self, comp_id: int, router_idx: int, sink) -> None:
        """Attach a delivery endpoint; it must expose space(), deliver(pkt),
        and a per-cycle delivery width."""
        self.sinks[comp_id] = sink
        self.sink_router[comp_id] = router_idx

    def register_source(self, comp_id: int, router_idx: int, ports: int = 1) -> None:
        """One local ingress buffer per port, so a source can inject up to
        `ports` packets per cycle and bursts do not serialize behind one
        buffer head."""
        router = self.routers[router_idx]
        bufs = [(router, router.add_local_buffer()) for _ in range(ports)]
        self.source_router[comp_id] = router_idx
        self.source_bufs[comp_id] = bufs

    def hop_distance(self, r1: int, r2: int) -> int:
        a, b = self.routers[r1], self.routers[r2]
        dx = abs(a.x - b.x)
        dy = abs(a.y - b.y)
        return min(dx, self.width - dx) + min(dy, self.height - dy)

    # -- phase A --------------------------------------------------------

    def ingress_space(self, comp_id: int) -> int:
        """Slots a source may plan to fill this cycle; zero while the
        network is over its admission threshold."""
        if self.in_flight >= self.soft_cap:
            return 0
        return sum(
            self.depth - len(router.in_bufs[buf_idx])
            for router, buf_idx in self.source_bufs[comp_id]
        )

    def _route_candidates(self, router: Router, dst: Router) -> tuple[int, int]:
        """Up to one minimal direction per dimension; -1 means aligned."""
        dir_x = -1
        if router.x != dst.x:
            fwd = (dst.x - router.x) % self.width
            dir_x = EAST if fwd <= self.width - fwd else WEST
        dir_y = -1
        if router.y != dst.y:
            fwd = (dst.y - router.y) % self.height
            dir_y = NORTH if fwd <= self.height - fwd else SOUTH
        return dir_x, dir_y

    def phase_a(self, cycle: int) -> None:
        depth = self.depth
        for router in self.routers:
            if router.occupancy == 0:
                continue
            router.intents.clear()
            used_links = 0
            sink_plan: dict[int, list[int]] = {}
            n_bufs = len(router.in_bufs)
            start = cycle % n_bufs  # rotate arbitration so locals are not starved
            for k in range(n_bufs):
                buf_idx = (start + k) % n_bufs
                buf = router.in_bufs[buf_idx]
                if not buf:
                    continue
                pkt = buf[0]
                if pkt.ready > cycle:
                    continue
                if pkt.route_to == router.idx:
                    plan = sink_plan.get(pkt.dst)
                    if plan is None:
                        sink = self.sinks[pkt.dst]
                        plan = [0, min(sink.width, sink.space())]
                        sink_plan[pkt.dst] = plan
                    if plan[0] < plan[1]:
                        plan[0] += 1
                        router.intents.append((buf_idx, _ACT_DELIVER, pkt.dst))
                    continue
                dst = self.routers[pkt.route_to]
                dir_x, dir_y = self._route_candidates(router, dst)
                on_escape = _ESCAPE_BASE <= buf_idx < _LOCAL_BASE

                if on_escape:
                    # dimension order: X to completion, then Y; bubble rule
                    d = dir_x if dir_x >= 0 else dir_y
                    if used_links >> d & 1:
                        continue
                    travel = _OPPOSITE[buf_idx - _ESCAPE_BASE]
                    nb, nb_adaptive = router.neighbors[d]
                    target = nb.in_bufs[nb_adaptive + _ESCAPE_BASE]
                    need = 1 if d == travel else 2
                    if depth - len(target) >= need:
                        used_links |= 1 << d
                        router.intents.append((buf_idx, _ACT_FORWARD_ESCAPE, d))
                    continue

                # adaptive layer: straight may fill the last slot, a turn
                # must leave one bubble, an injection two
                if buf_idx < _ESCAPE_BASE:
                    travel = _OPPOSITE[buf_idx]
                    turn_need = 2
                else:
                    travel = -1
                    turn_need = 3
                best = -1
                best_free = 0
                if dir_x >= 0 and not used_links >> dir_x & 1:
                    nb, nb_buf = router.neighbors[dir_x]
                    free = depth - len(nb.in_bufs[nb_buf])
                    need = 1 if dir_x == travel else turn_need
                    if free >= need:
                        best, best_free = dir_x, free
                if dir_y >= 0 and not used_links >> dir_y & 1:
                    nb, nb_buf = router.neighbors[dir_y]
                    free = depth - len(nb.in_bufs[nb_buf])
                    need = 1 if dir_y == travel else turn_need
                    if free >= need and free > best_free:
                        best = dir_y
                if best >= 0:
                    used_links |= 1 << best
                    router.intents.append((buf_idx, _ACT_FORWARD_ADAPTIVE, best))
                    continue
                # adaptive path blocked: fall over to the escape layer on
                # the dimension-order hop
                d = dir_x if dir_x >= 0 else dir_y
                if used_links >> d & 1:
                    continue
                nb, nb_adaptive = router.neighbors[d]
                target = nb.in_bufs[nb_adaptive + _ESCAPE_BASE]
                if depth - len(target) >= 2:
                    used_links |= 1 << d
                    router.intents.append((buf_idx, _ACT_FORWARD_ESCAPE, d))

    # -- phase B --------------------------------------------------------

    def phase_b(self, cycle: int) -> int:
        """Apply all plans; returns the number of moves (progress signal)."""
        moves = 0
        hop_latency = self.hop_latency
        for router in self.routers:
            if router.occupancy == 0 or not router.intents:
                continue
            for buf_idx, action, arg in router.intents:
                pkt = router.in_bufs[buf_idx].popleft()
                router.occupancy -= 1
                if action == _ACT_DELIVER:
                    self.sinks[arg].deliver(pkt)
                    self.delivered += 1
                    self.in_flight -= 1
                    if len(self.latency_samples) < LATENCY_SAMPLE_CAP:
                        self.latency_samples.append((pkt.min_cycles, cycle - pkt.created))
                else:
                    nb, nb_adaptive = router.neighbors[arg]
                    if action == _ACT_FORWARD_ESCAPE:
                        nb.in_bufs[nb_adaptive + _ESCAPE_BASE].append(pkt)
                        self.escape_hops += 1
                    else:
                        nb.in_bufs[nb_adaptive].append(pkt)
                    pkt.ready = cycle + hop_latency
                    pkt.hops += 1
                    nb.occupancy += 1
                    router.forwarded_count += 1
                moves += 1
            router.intents.clear()
        return moves

    def inject(self, comp_id: int, pkt: Packet, cycle: int) -> None:
        """Commit one packet into the emptiest of the source's ingress
        buffers (phase B).  Callers must have checked ingress_space during
        phase A; injecting past capacity is an engine bug.
        """
        router, buf_idx = min(
            self.source_bufs[comp_id], key=lambda rb: (len(rb[0].in_bufs[rb[1]]), rb[1])
        )
        buf = router.in_bufs[buf_idx]
        if len(buf) >= self.depth:
            raise AssertionError("ingress overflow: phase A capacity check missed")
        pkt.created = cycle
        pkt.ready = cycle + self.hop_latency
        pkt.route_to = self.sink_router[pkt.dst]
        pkt.min_cycles = self.hop_distance(router.idx, pkt.route_to) * self.hop_latency
        buf.append(pkt)
        router.occupancy += 1
        self.injected += 1
        self.in_flight += 1

    def total_packets(self) -> int:
        return self.in_flight
