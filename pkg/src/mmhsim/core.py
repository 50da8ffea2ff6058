"""Multiply engine: instruction buffer, pipelines, scoreboard, emission.

One engine holds a bounded instruction buffer feeding a set of pipelines
round-robin.  Each accepted instruction becomes a context that walks four
single-cycle stages: decode, address generation (shared generators), a
memory wait gated by a response scoreboard, execution (one result lane
per multiplier per cycle, multipliers shared across pipelines), and
emission of accumulate packets (at most one message per port per cycle,
shared between outgoing memory requests and emitted packets).

Register pressure bounds concurrency: a context owns four register slots
(one per operand group), so a pipeline admits regs_per_pipeline // 4
contexts; a full pipeline holds further instructions in the buffer, which
backpressures the dispatcher.
"""

from __future__ import annotations

from collections import deque

from .noc import K_HACC, K_READ, Packet

S_DECODED = 0
S_WAIT = 1
S_EXEC = 2
S_EMIT = 3


class Context:
    __slots__ = ("instr_idx", "accept", "lanes", "lines", "pending", "state", "exec_remaining", "emit_pos")

    def __init__(self, instr_idx: int, accept: int, lanes: list, lines: list):
        self.instr_idx = instr_idx
        self.accept = accept
        self.lanes = lanes  # (tag, value, counter, mem_comp_id) per populated lane
        self.lines = lines  # (line_addr, mc_comp_id) per distinct memory line
        self.pending = 0
        self.state = S_DECODED
        self.exec_remaining = len(lanes)
        self.emit_pos = 0


class Core:
    __slots__ = (
        "comp_id", "idx", "n_pipelines", "ctx_cap", "multipliers", "addr_generators", "ports",
        "buffer_depth", "instr_buffer", "pipelines", "live_ctx",
        "rr_decode", "rr_exec", "rr_emit", "rr_addr",
        "req_seq", "req_map", "out_reqs", "sink", "mem_base", "traffic",
        "mult_count", "hacc_emitted", "emitted_sum", "mmh_cpi",
        "busy_cycles", "stall_cycles", "idle_cycles",
        "_inbox_pop", "_instr_pop", "_sends",
    )

    def __init__(
        self,
        comp_id: int,
        idx: int,
        n_pipelines: int,
        regs_per_pipeline: int,
        multipliers: int,
        addr_generators: int,
        ports: int,
        buffer_depth: int,
        n_mems: int,
        mem_base: int,
    ):
        self.comp_id = comp_id
        self.idx = idx
        self.n_pipelines = n_pipelines
        self.ctx_cap = max(1, regs_per_pipeline // 4)
        self.multipliers = multipliers
        self.addr_generators = addr_generators
        self.ports = ports
        self.buffer_depth = buffer_depth
        self.instr_buffer: deque = deque()
        self.pipelines: list[list[Context]] = [[] for _ in range(n_pipelines)]
        self.live_ctx = 0
        self.rr_decode = 0
        self.rr_exec = 0
        self.rr_emit = 0
        self.rr_addr = 0
        self.req_seq = 0
        self.req_map: dict[int, Context] = {}
        self.out_reqs: deque[Packet] = deque()
        self.sink = None  # wired by the engine
        self.mem_base = mem_base
        self.traffic = [0] * n_mems
        self.mult_count = 0
        self.hacc_emitted = 0
        self.emitted_sum = 0.0
        self.mmh_cpi: list[int] = []
        self.busy_cycles = 0
        self.stall_cycles = 0
        self.idle_cycles = 0
        self._inbox_pop = 0
        self._instr_pop = 0
        self._sends: list[Packet] = []

    def accept_ok(self) -> bool:
        return len(self.instr_buffer) < self.buffer_depth

    def compute(self, cycle: int, net) -> bool:
        inbox = self.sink.inbox
        if not (self.instr_buffer or self.live_ctx or self.out_reqs or inbox):
            self.idle_cycles += 1
            return False
        did_work = False

        # scoreboard: absorb memory responses
        if inbox:
            for pkt in inbox:
                ctx = self.req_map.pop(pkt.payload[0])
                ctx.pending -= 1
            self._inbox_pop = len(inbox)
            did_work = True

        port_budget = self.ports
        space = net.ingress_space(self.comp_id)

        # emission: oldest stage first so one instruction advances one
        # stage per cycle
        finished: list[tuple[list, Context]] = []
        n_pipes = self.n_pipelines
        for off in range(n_pipes):
            if port_budget <= 0 or space <= 0:
                break
            pipe = self.pipelines[(self.rr_emit + off) % n_pipes]
            for ctx in pipe:
                if ctx.state != S_EMIT:
                    continue
                lanes = ctx.lanes
                while port_budget > 0 and space > 0 and ctx.emit_pos < len(lanes):
                    tag, value, counter, mem_comp = lanes[ctx.emit_pos]
                    self._sends.append(Packet(K_HACC, self.comp_id, mem_comp, (tag, value, counter, self.idx)))
                    self.traffic[mem_comp - self.mem_base] += 1
                    self.hacc_emitted += 1
                    self.emitted_sum += value
                    ctx.emit_pos += 1
                    port_budget -= 1
                    space -= 1
                    did_work = True
                if ctx.emit_pos == len(lanes):
                    self.mmh_cpi.append(cycle - ctx.accept)
                    finished.append((pipe, ctx))
        self.rr_emit = (self.rr_emit + 1) % n_pipes
        for pipe, ctx in finished:
            pipe.remove(ctx)
            self.live_ctx -= 1

        # execute: each pipeline feeds one multiplier lane per cycle, and at
        # most `multipliers` lanes advance per cycle across the engine
        budget = self.multipliers
        for off in range(n_pipes):
            if budget <= 0:
                break
            for ctx in self.pipelines[(self.rr_exec + off) % n_pipes]:
                if ctx.state == S_EXEC or (ctx.state == S_WAIT and ctx.pending == 0):
                    ctx.state = S_EXEC
                    if ctx.exec_remaining:
                        ctx.exec_remaining -= 1
                        self.mult_count += 1
                        budget -= 1
                        did_work = True
                        if ctx.exec_remaining == 0:
                            ctx.state = S_EMIT
                        break
        self.rr_exec = (self.rr_exec + 1) % n_pipes

        # address generation: shared generators, round-robin over pipelines
        gen_budget = self.addr_generators
        for off in range(n_pipes):
            if gen_budget <= 0:
                break
            for ctx in self.pipelines[(self.rr_addr + off) % n_pipes]:
                if ctx.state != S_DECODED:
                    continue
                for line_addr, mc_comp in ctx.lines:
                    req_id = self.req_seq
                    self.req_seq += 1
                    self.req_map[req_id] = ctx
                    self.out_reqs.append(Packet(K_READ, self.comp_id, mc_comp, (req_id, self.comp_id, line_addr)))
                ctx.pending = len(ctx.lines)
                ctx.state = S_WAIT
                gen_budget -= 1
                did_work = True
                break
        self.rr_addr = (self.rr_addr + 1) % n_pipes

        # leftover port slots carry outgoing memory requests
        while port_budget > 0 and space > 0 and self.out_reqs:
            self._sends.append(self.out_reqs.popleft())
            port_budget -= 1
            space -= 1
            did_work = True

        # decode: one instruction per cycle into a pipeline with a free
        # register allocation
        if self.instr_buffer:
            chosen = -1
            for off in range(n_pipes):
                p = (self.rr_decode + off) % n_pipes
                if len(self.pipelines[p]) < self.ctx_cap:
                    chosen = p
                    break
            if chosen >= 0:
                instr_idx, lanes, lines, accept = self.instr_buffer[0]
                self.pipelines[chosen].append(Context(instr_idx, accept, lanes, lines))
                self.live_ctx += 1
                self.rr_decode = (chosen + 1) % n_pipes
                self._instr_pop = 1
                did_work = True

        if did_work:
            self.busy_cycles += 1
        else:
            self.stall_cycles += 1
        return did_work

    def commit(self, cycle: int, net) -> None:
        if self._inbox_pop:
            inbox = self.sink.inbox
            for _ in range(self._inbox_pop):
                inbox.popleft()
            self._inbox_pop = 0
        if self._instr_pop:
            self.instr_buffer.popleft()
            self._instr_pop = 0
        if self._sends:
            for pkt in self._sends:
                net.inject(self.comp_id, pkt, cycle)
            self._sends.clear()

    def pending(self) -> bool:
        return bool(self.instr_buffer or self.live_ctx or self.out_reqs or self.sink.inbox)
