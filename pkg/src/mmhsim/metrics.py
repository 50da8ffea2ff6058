"""Run metrics: counters, histograms, traces, and their file exports.

Every field is a deterministic function of (workload, config, seed), so a
serialized report is byte-stable across repeated runs; nothing here reads
clocks or environment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field


def _hist(samples: list[int]) -> dict[int, int]:
    out: dict[int, int] = {}
    for s in samples:
        out[s] = out.get(s, 0) + 1
    return out


def _mean(samples: list[int]) -> float:
    return sum(samples) / len(samples) if samples else 0.0


@dataclass
class MetricsReport:
    total_cycles: int
    pp_count: int
    output_nnz: int
    hacc_emitted: int
    hacc_absorbed: int
    evictions: int
    writes_landed: int
    emitted_value_sum: float
    evicted_value_sum: float

    mmh_cpi_hist: dict[int, int]
    hacc_cpi_hist: dict[int, int]
    mmh_cpi_mean: float
    hacc_cpi_mean: float

    core_busy: list[int]
    core_stall: list[int]
    core_idle: list[int]
    mem_busy: list[int]
    mem_stall: list[int]
    mem_idle: list[int]
    mc_busy: list[int]
    mc_stall: list[int]
    mc_idle: list[int]

    core_mults: list[int]
    mem_accums: list[int]
    traffic_matrix: list[list[int]]
    router_forwarded: list[int]

    occupancy_peak: int
    occupancy_mean: float
    mem_peak_occupancy: list[int]
    inflight_mean: float
    served_bytes: list[int]

    packets_injected: int
    packets_delivered: int
    latency_samples: list[list[int]]
    dispatch_stalls: int
    forced_barriers: int

    gops: float
    run_seed: int
    config_name: str
    mapping_policy: str
    eviction_mode: str
    mmh_width: int

    occupancy_trace: list[int] = field(default_factory=list, repr=False)
    inflight_trace: list[int] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = {}
        for name, value in self.__dict__.items():
            if name in ("occupancy_trace", "inflight_trace"):
                continue
            if name in ("mmh_cpi_hist", "hacc_cpi_hist"):
                d[name] = {str(k): value[k] for k in sorted(value)}
            else:
                d[name] = value
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def save(self, out_dir: str) -> dict[str, str]:
        """Write metrics.json plus plot-ready CSV traces; returns paths."""
        import os

        paths = {}
        mpath = os.path.join(out_dir, "metrics.json")
        with open(mpath, "w", encoding="ascii") as f:
            f.write(self.to_json())
        paths["metrics"] = mpath

        opath = os.path.join(out_dir, "occupancy.csv")
        with open(opath, "w", encoding="ascii") as f:
            f.write("cycle,total_occupancy\n")
            for i, v in enumerate(self.occupancy_trace):
                f.write(f"{i + 1},{v}\n")
        paths["occupancy"] = opath

        ipath = os.path.join(out_dir, "inflight.csv")
        with open(ipath, "w", encoding="ascii") as f:
            f.write("cycle,inflight_transactions\n")
            for i, v in enumerate(self.inflight_trace):
                f.write(f"{i + 1},{v}\n")
        paths["inflight"] = ipath

        hpath = os.path.join(out_dir, "heatmap.csv")
        with open(hpath, "w", encoding="ascii") as f:
            f.write("core," + ",".join(f"mem{j}" for j in range(len(self.mem_accums))) + "\n")
            for i, row in enumerate(self.traffic_matrix):
                f.write(f"{i}," + ",".join(str(v) for v in row) + "\n")
        paths["heatmap"] = hpath
        return paths


def build_report(machine) -> MetricsReport:
    """Assemble the report from a finished machine in deterministic order."""
    mmh_samples: list[int] = []
    for core in machine.cores:
        mmh_samples.extend(core.mmh_cpi)
    hacc_samples: list[int] = []
    for mem in machine.mems:
        hacc_samples.extend(mem.hacc_cpi)
    occupancy = machine.occupancy_trace
    inflight = machine.inflight_trace
    cfg = machine.cfg
    cycles = machine.cycle
    pp = machine.workload.expected_pp_count
    gops = (2.0 * pp * cfg.frequency_ghz / cycles) if cycles else 0.0
    return MetricsReport(
        total_cycles=cycles,
        pp_count=pp,
        output_nnz=machine.workload.expected_output_nnz,
        hacc_emitted=sum(c.hacc_emitted for c in machine.cores),
        hacc_absorbed=sum(m.absorbed for m in machine.mems),
        evictions=sum(m.pad.evictions for m in machine.mems),
        writes_landed=sum(mc.writes_done for mc in machine.mcs),
        emitted_value_sum=sum(c.emitted_sum for c in machine.cores),
        evicted_value_sum=machine.evicted_sum,
        mmh_cpi_hist=_hist(mmh_samples),
        hacc_cpi_hist=_hist(hacc_samples),
        mmh_cpi_mean=_mean(mmh_samples),
        hacc_cpi_mean=_mean(hacc_samples),
        core_busy=[c.busy_cycles for c in machine.cores],
        core_stall=[c.stall_cycles for c in machine.cores],
        core_idle=[c.idle_cycles for c in machine.cores],
        mem_busy=[m.busy_cycles for m in machine.mems],
        mem_stall=[m.stall_cycles for m in machine.mems],
        mem_idle=[m.idle_cycles for m in machine.mems],
        mc_busy=[mc.busy_cycles for mc in machine.mcs],
        mc_stall=[mc.stall_cycles for mc in machine.mcs],
        mc_idle=[mc.idle_cycles for mc in machine.mcs],
        core_mults=[c.mult_count for c in machine.cores],
        mem_accums=[m.absorbed for m in machine.mems],
        traffic_matrix=[list(c.traffic) for c in machine.cores],
        router_forwarded=[r.forwarded_count for r in machine.net.routers],
        occupancy_peak=max(occupancy) if occupancy else 0,
        occupancy_mean=(sum(occupancy) / len(occupancy)) if occupancy else 0.0,
        mem_peak_occupancy=[m.pad.peak_occupancy for m in machine.mems],
        inflight_mean=(sum(inflight) / len(inflight)) if inflight else 0.0,
        served_bytes=[mc.served_bytes for mc in machine.mcs],
        packets_injected=machine.net.injected,
        packets_delivered=machine.net.delivered,
        latency_samples=[list(s) for s in machine.net.latency_samples],
        dispatch_stalls=machine.dispatch_stalls,
        forced_barriers=machine.forced_barriers,
        gops=gops,
        run_seed=machine.run_seed,
        config_name=cfg.name,
        mapping_policy=cfg.mapping.value,
        eviction_mode=cfg.eviction_mode.value,
        mmh_width=cfg.mmh_width,
        occupancy_trace=occupancy,
        inflight_trace=inflight,
    )
