"""Top-level cycle loop: machine assembly, dispatch, drain, verification.

Every cycle runs in two phases.  Phase A: all components plan against the
state committed last cycle (pure with respect to shared state, so the
components may be advanced by any number of worker threads with identical
results).  Phase B: plans commit in a fixed order (routers, cores,
accumulators, memory controllers, then the dispatcher), which makes every
run a deterministic function of (workload, config, seed).

Conservation is enforced at the end of every run: emitted accumulate
instructions must equal the compiler's partial-product count, evictions
must equal the expected output nonzero count, and the summed evicted
values must match the summed emitted values.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

from .accmem import AccMem
from .compiler import CompiledWorkload, iter_lanes
from .config import EvictionMode, TileConfig
from .core import Core
from .mapping import MappingPolicy
from .memsys import MemoryController
from .metrics import MetricsReport, build_report
from .noc import Sink, TorusNetwork
from .sparse import Layout, SparseMatrix


class SimulationError(RuntimeError):
    pass


class DeadlockError(SimulationError):
    """The machine stopped making progress with work outstanding."""


class ConservationError(SimulationError):
    """An end-of-run accounting identity failed (internal bug trap)."""


WATCHDOG_INTERVAL = 100_000
DEFAULT_MAX_CYCLES = 10_000_000


def _pow2_grid(n: int) -> tuple[int, int]:
    """Factor a power of two into a near-square (wider-than-tall) grid."""
    if n & (n - 1):
        raise ValueError(f"count {n} must be a power of two")
    w = 1
    while w * w < n:
        w *= 2
    return w, n // w


class Machine:
    def __init__(self, workload: CompiledWorkload, cfg: TileConfig, run_seed: int = 1):
        cfg.validate()
        if workload.mmh_width != cfg.mmh_width:
            raise SimulationError(
                f"workload compiled for width {workload.mmh_width} but config asks {cfg.mmh_width}"
            )
        if 2 * max(cfg.cores_per_tile, cfg.mems_per_tile) > cfg.routers_per_tile:
            raise SimulationError("not enough routers per tile to place cores and accumulators")
        self.workload = workload
        self.cfg = cfg
        self.run_seed = run_seed

        nc, nm, nt = cfg.n_cores, cfg.n_mems, cfg.tiles
        self.mem_base = nc
        self.mc_base = nc + nm
        tgx, tgy = _pow2_grid(nt)
        lgx, lgy = _pow2_grid(cfg.routers_per_tile)
        width, height = tgx * lgx, tgy * lgy
        self.net = TorusNetwork(width, height, cfg.router_buffer_depth)

        def router_idx(tile: int, local: int) -> int:
            tx, ty = tile % tgx, tile // tgx
            lx, ly = local % lgx, local // lgx
            return (ty * lgy + ly) * width + (tx * lgx + lx)

        line = cfg.line_bytes

        def mc_comp_of_addr(addr: int) -> int:
            return self.mc_base + (addr // line) % nt

        self.cores: list[Core] = []
        for i in range(nc):
            tile, j = divmod(i, cfg.cores_per_tile)
            r = router_idx(tile, 2 * j)
            core = Core(
                comp_id=i,
                idx=i,
                n_pipelines=cfg.pipelines,
                regs_per_pipeline=cfg.regs_per_pipeline,
                multipliers=cfg.multipliers,
                addr_generators=cfg.addr_generators,
                ports=cfg.core_ports,
                buffer_depth=cfg.instr_buffer_depth,
                n_mems=nm,
                mem_base=self.mem_base,
            )
            core.sink = Sink(None, cfg.core_ports)
            self.net.register_sink(i, r, core.sink)
            self.net.register_source(i, r, cfg.core_ports)
            self.cores.append(core)

        rolling = cfg.eviction_mode is EvictionMode.ROLLING
        self.mems: list[AccMem] = []
        for j in range(nm):
            tile, local = divmod(j, cfg.mems_per_tile)
            r = router_idx(tile, 2 * local + 1)
            comp = self.mem_base + j
            mem = AccMem(
                comp_id=comp,
                idx=j,
                n_lines=cfg.hashlines,
                n_engines=cfg.hash_engines,
                comparators=cfg.comparators_per_engine,
                rolling=rolling,
                ports=cfg.mem_ports,
                fifo_depth=cfg.mem_fifo_depth,
            )
            mem.mc_of_addr = mc_comp_of_addr
            mem.output_addr_of_tag = workload.output_addr
            self.net.register_sink(comp, r, mem)
            self.net.register_source(comp, r, cfg.mem_ports)
            self.mems.append(mem)

        self.mcs: list[MemoryController] = []
        for t in range(nt):
            r = router_idx(t, cfg.routers_per_tile - 1)
            comp = self.mc_base + t
            mc = MemoryController(
                comp_id=comp,
                idx=t,
                image_size=workload.image.total_size,
                line_bytes=line,
                coalesce_window=cfg.coalesce_window,
                bandwidth=cfg.channel.bandwidth_bytes_per_cycle,
                base_latency=cfg.channel.base_latency,
                max_inflight=cfg.channel.max_inflight,
                read_capacity=cfg.mc_read_buffer,
                write_capacity=cfg.mc_write_buffer,
                cache_lines=cfg.mc_cache_lines,
                cache_hit_latency=cfg.mc_cache_hit_latency,
            )
            mc.sink = Sink(cfg.coalesce_window, 4)
            self.net.register_sink(comp, r, mc.sink)
            self.net.register_source(comp, r, 4)
            self.mcs.append(mc)

        # pre-decoded lane data and line lists per instruction
        self.raw_lanes: list[list[tuple[int, float, int]]] = []
        self.instr_lines: list[list[tuple[int, int]]] = []
        for i, instr in enumerate(workload.instructions):
            lanes = [(tag, a * b, counter) for tag, a, b, counter in iter_lanes(workload, i)]
            self.raw_lanes.append(lanes)
            pa, pb = instr.lanes_a, instr.lanes_b
            spans = (
                (instr.a_data_addr, pa * 8),
                (instr.b_col_ind_addr, pb * 4),
                (instr.b_data_addr, pb * 8),
                (instr.roll_counter_addr, pa * pb * 2),
            )
            seen = set()
            lines = []
            for base, nbytes in spans:
                for ln in range(base // line, (base + nbytes - 1) // line + 1):
                    if ln not in seen:
                        seen.add(ln)
                        lines.append((ln * line, mc_comp_of_addr(ln * line)))
            self.instr_lines.append(lines)

        self.policy = MappingPolicy(cfg.mapping, nm, cfg.k_bits, run_seed)
        self.ip = 0
        self.last_block = -1
        self.dispatch_stalls = 0
        self.forced_barriers = 0
        self.cycle = 0
        self.evicted_sum = 0.0
        self.occupancy_trace: list[int] = []
        self.inflight_trace: list[int] = []

    # -- dispatch ---------------------------------------------------------

    def _dispatch(self, cycle: int) -> int:
        issued = 0
        n = len(self.workload.instructions)
        for _ in range(self.cfg.issue_width):
            if self.ip >= n:
                break
            block = self.workload.row_blocks[self.ip]
            if block != self.last_block:
                self.policy.ensure_row_block(block)
                self.last_block = block
            best = None
            best_len = -1
            for core in self.cores:
                l = len(core.instr_buffer)
                if best is None or l < best_len:
                    best, best_len = core, l
                    if l == 0:
                        break
            if best_len >= self.cfg.instr_buffer_depth:
                self.dispatch_stalls += 1
                break
            mem_base = self.mem_base
            policy = self.policy
            lanes = [
                (tag, value, counter, mem_base + policy.map_tag(tag, block))
                for tag, value, counter in self.raw_lanes[self.ip]
            ]
            best.instr_buffer.append((self.ip, lanes, self.instr_lines[self.ip], cycle))
            self.ip += 1
            issued += 1
        return issued

    # -- main loop --------------------------------------------------------

    def run(self, workers: int = 1, collect_traces: bool = True, max_cycles: int = DEFAULT_MAX_CYCLES):
        cores, mems, mcs, net = self.cores, self.mems, self.mcs, self.net
        wl = self.workload
        expected_nnz = wl.expected_output_nnz
        expected_pp = wl.expected_pp_count
        n_instr = len(wl.instructions)
        barrier_mode = self.cfg.eviction_mode is EvictionMode.BARRIER
        final_barrier_fired = False
        rotation_streak = 0

        pool = None
        chunks: list[list] = []
        if workers > 1:
            components = cores + mems + mcs
            size = max(1, -(-len(components) // workers))
            chunks = [components[i : i + size] for i in range(0, len(components), size)]
            pool = ThreadPoolExecutor(max_workers=workers + 1)

        def chunk_compute(chunk, cycle):
            worked = False
            for comp in chunk:
                if comp.compute(cycle, net):
                    worked = True
            return worked

        try:
            while True:
                self.cycle += 1
                cycle = self.cycle

                # phase A: plan against last cycle's committed state
                if pool is None:
                    worked = False
                    for core in cores:
                        if core.compute(cycle, net):
                            worked = True
                    for mem in mems:
                        if mem.compute(cycle, net):
                            worked = True
                    for mc in mcs:
                        if mc.compute(cycle, net):
                            worked = True
                    net.phase_a(cycle)
                else:
                    futures = [pool.submit(chunk_compute, ch, cycle) for ch in chunks]
                    futures.append(pool.submit(net.phase_a, cycle))
                    worked = False
                    for fut in futures:
                        if fut.result():
                            worked = True

                # phase B: commit in fixed order
                moves = net.phase_b(cycle)
                for core in cores:
                    core.commit(cycle, net)
                for mem in mems:
                    mem.commit(cycle, net)
                for mc in mcs:
                    mc.commit(cycle, net)
                issued = self._dispatch(cycle)

                progress = worked or moves or issued

                if collect_traces:
                    self.occupancy_trace.append(sum(m.pad.occupancy for m in mems))
                    self.inflight_trace.append(sum(len(mc.inflight) for mc in mcs))

                if barrier_mode and not final_barrier_fired and self.ip >= n_instr:
                    if sum(m.absorbed for m in mems) == expected_pp:
                        for mem in mems:
                            if mem.pad.completed_count:
                                mem.flush_pending = True
                        final_barrier_fired = True

                # drain detection
                if net.in_flight == 0 and self.ip >= n_instr:
                    if (
                        sum(mc.writes_done for mc in mcs) == expected_nnz
                        and not any(c.pending() for c in cores)
                        and not any(m.pending() for m in mems)
                        and not any(mc.pending() for mc in mcs)
                    ):
                        break

                if not progress:
                    if any(mc.inflight or mc.hit_queue for mc in mcs) or any(
                        m.busy_until > cycle for m in mems
                    ):
                        pass  # channel or engine time passing; events are scheduled
                    elif barrier_mode and any(m.pad.completed_count for m in mems):
                        # quiescence with completed lines: a barrier point
                        for mem in mems:
                            if mem.pad.completed_count:
                                mem.flush_pending = True
                        self.forced_barriers += 1
                    elif any(m._rotated for m in mems):
                        rotation_streak += 1
                        if rotation_streak > WATCHDOG_INTERVAL:
                            raise DeadlockError(
                                f"no progress for {rotation_streak} cycles at cycle {cycle}"
                            )
                    else:
                        raise DeadlockError(f"machine quiescent with work outstanding at cycle {cycle}")
                else:
                    rotation_streak = 0

                if cycle >= max_cycles:
                    raise DeadlockError(f"exceeded max_cycles={max_cycles}")
        finally:
            if pool is not None:
                pool.shutdown(wait=False)

        self._verify(expected_pp, expected_nnz)
        return self._assemble_result(), build_report(self)

    # -- end-of-run checks -------------------------------------------------

    def _verify(self, expected_pp: int, expected_nnz: int) -> None:
        for mem in self.mems:
            mem.pad.assert_drained()
        emitted = sum(c.hacc_emitted for c in self.cores)
        absorbed = sum(m.absorbed for m in self.mems)
        evictions = sum(m.pad.evictions for m in self.mems)
        writes = sum(mc.writes_done for mc in self.mcs)
        if emitted != expected_pp or absorbed != expected_pp:
            raise ConservationError(
                f"partial products: emitted {emitted}, absorbed {absorbed}, expected {expected_pp}"
            )
        if evictions != expected_nnz or writes != expected_nnz:
            raise ConservationError(
                f"evictions {evictions}, writes {writes}, expected nnz {expected_nnz}"
            )
        if self.net.injected != self.net.delivered:
            raise ConservationError(
                f"packet loss: injected {self.net.injected}, delivered {self.net.delivered}"
            )
        for lo, actual in self.net.latency_samples:
            if actual < lo:
                raise ConservationError(f"delivery latency {actual} beats hop lower bound {lo}")
        emitted_sum = sum(c.emitted_sum for c in self.cores)
        self.evicted_sum = sum(
            value for mc in self.mcs for _, value in mc.writes
        )
        if abs(self.evicted_sum - emitted_sum) > 1e-9 * max(1.0, abs(emitted_sum)):
            raise ConservationError(
                f"value conservation: emitted {emitted_sum}, evicted {self.evicted_sum}"
            )
        total = self.cycle
        for comp in (*self.cores, *self.mems, *self.mcs):
            if comp.busy_cycles + comp.stall_cycles + comp.idle_cycles != total:
                raise ConservationError("cycle accounting mismatch for a component")

    def _assemble_result(self) -> SparseMatrix:
        wl = self.workload
        values: dict[int, float] = {}
        for mc in self.mcs:
            for addr, value in mc.writes:
                tag = wl.tag_of_output_addr(addr)
                if tag in values:
                    raise ConservationError(f"duplicate writeback for output tag {tag}")
                values[tag] = value
        n_cols = wl.n_cols
        offsets = [0] * (wl.n_rows + 1)
        entries = sorted(values.items())
        minor = [0] * len(entries)
        vals = [0.0] * len(entries)
        for i, (tag, v) in enumerate(entries):
            r, c = divmod(tag, n_cols)
            offsets[r + 1] += 1
            minor[i] = c
            vals[i] = v
        for r in range(wl.n_rows):
            offsets[r + 1] += offsets[r]
        return SparseMatrix(wl.n_rows, n_cols, Layout.CSR, offsets, minor, vals)


def run(
    workload: CompiledWorkload,
    cfg: TileConfig,
    run_seed: int = 1,
    workers: int = 1,
    collect_traces: bool = True,
    max_cycles: int = DEFAULT_MAX_CYCLES,
) -> tuple[SparseMatrix, MetricsReport]:
    """Execute a compiled workload to drain and return (result, metrics)."""
    machine = Machine(workload, cfg, run_seed)
    return machine.run(workers=workers, collect_traces=collect_traces, max_cycles=max_cycles)
