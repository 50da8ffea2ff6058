"""Machine configuration: per-component knobs and the three stock presets.

The presets scale one chip family: always eight tiles, each owning one
memory channel, with core/accumulator counts and per-unit resources
growing from tile4 to tile64.  Channel bandwidth is expressed in bytes
per cycle at the configured clock (128 GB/s aggregate over 8 channels at
1 GHz = 16 B/cycle per channel; the hbm256 variant doubles that).
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field

from .mapping import PolicyKind


class EvictionMode(enum.Enum):
    ROLLING = "rolling"
    BARRIER = "barrier"


@dataclass(frozen=True)
class ChannelModel:
    """Parametric memory channel: flat latency plus bandwidth occupancy."""

    bandwidth_bytes_per_cycle: int = 16
    base_latency: int = 32
    max_inflight: int = 16


@dataclass(frozen=True)
class TileConfig:
    """Full knob set for one simulated machine."""

    name: str = "tile16"
    tiles: int = 8
    cores_per_tile: int = 4
    mems_per_tile: int = 4

    # multiply engine
    pipelines: int = 4
    regs_per_pipeline: int = 8
    multipliers: int = 4
    addr_generators: int = 2
    core_ports: int = 4

    # accumulation engine
    hashlines: int = 2048
    hash_engines: int = 4
    comparators_per_engine: int = 4
    accumulators: int = 256
    mem_ports: int = 4

    # interconnect
    routers_per_tile: int = 8
    router_buffer_depth: int = 8

    # queues
    instr_buffer_depth: int = 8
    mem_fifo_depth: int = 8
    mc_read_buffer: int = 32
    mc_write_buffer: int = 32

    # memory system
    coalesce_window: int = 16
    line_bytes: int = 64
    mc_cache_lines: int = 256
    mc_cache_hit_latency: int = 8
    channel: ChannelModel = field(default_factory=ChannelModel)

    # workload shaping and policies
    mmh_width: int = 4
    eviction_mode: EvictionMode = EvictionMode.ROLLING
    mapping: PolicyKind = PolicyKind.DRHM_LOWER
    k_bits: int = 16
    issue_width: int = 1

    frequency_ghz: float = 1.0
    hashpad_mb: float = 3.0  # reporting only

    @property
    def n_cores(self) -> int:
        return self.tiles * self.cores_per_tile

    @property
    def n_mems(self) -> int:
        return self.tiles * self.mems_per_tile

    @property
    def contexts_per_pipeline(self) -> int:
        # One in-flight multiply context holds its four operand groups in
        # four register slots, so register depth bounds concurrency.
        return max(1, self.regs_per_pipeline // 4)

    def validate(self) -> None:
        for name in (
            "tiles", "cores_per_tile", "mems_per_tile", "pipelines", "regs_per_pipeline",
            "multipliers", "addr_generators", "core_ports", "hashlines", "hash_engines",
            "comparators_per_engine", "accumulators", "mem_ports", "routers_per_tile",
            "router_buffer_depth", "instr_buffer_depth", "mem_fifo_depth",
            "mc_read_buffer", "mc_write_buffer", "coalesce_window", "line_bytes",
            "issue_width",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.router_buffer_depth < 2:
            raise ValueError("router_buffer_depth must be >= 2 (bubble flow control)")
        if self.hashlines & (self.hashlines - 1):
            raise ValueError("hashlines must be a power of two")
        if self.hash_engines & (self.hash_engines - 1):
            raise ValueError("hash_engines must be a power of two")
        if self.hash_engines > self.hashlines:
            raise ValueError("hash_engines cannot exceed hashlines")
        if self.mmh_width not in (1, 2, 4, 8):
            raise ValueError("mmh_width must be one of 1, 2, 4, 8")
        if not (0 <= self.k_bits < 32):
            raise ValueError("k_bits must be in [0, 32)")
        if self.channel.bandwidth_bytes_per_cycle < 1 or self.channel.max_inflight < 1:
            raise ValueError("channel bandwidth and max_inflight must be >= 1")


def _tile4() -> TileConfig:
    return TileConfig(
        name="tile4",
        cores_per_tile=1,
        mems_per_tile=1,
        pipelines=2,
        regs_per_pipeline=4,
        multipliers=2,
        addr_generators=1,
        hashlines=4096,
        hash_engines=2,
        comparators_per_engine=1,
        accumulators=128,
        routers_per_tile=4,
        hashpad_mb=0.75,
    )


def _tile16() -> TileConfig:
    return TileConfig(name="tile16")


def _tile64() -> TileConfig:
    return TileConfig(
        name="tile64",
        cores_per_tile=16,
        mems_per_tile=16,
        pipelines=8,
        regs_per_pipeline=16,
        multipliers=8,
        addr_generators=2,
        hashlines=2048,
        hash_engines=8,
        comparators_per_engine=8,
        accumulators=512,
        routers_per_tile=32,
        hashpad_mb=12.0,
    )


PRESETS = {
    "tile4": _tile4,
    "tile16": _tile16,
    "tile64": _tile64,
}


class ConfigError(ValueError):
    """Unknown preset or bad override."""


def from_preset(name: str, **overrides) -> TileConfig:
    """Resolve a preset by name, optionally replacing fields."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}' (choose from {', '.join(sorted(PRESETS))})")
    cfg = PRESETS[name]()
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    cfg.validate()
    return cfg


_ENUM_FIELDS = {
    "eviction_mode": lambda s: EvictionMode(s.lower()),
    "mapping": lambda s: PolicyKind(s.lower()),
}

_CHANNEL_FIELDS = {
    "channel_bandwidth_bytes_per_cycle": "bandwidth_bytes_per_cycle",
    "channel_base_latency": "base_latency",
    "channel_max_inflight": "max_inflight",
}


def apply_config_file(cfg: TileConfig, path: str) -> TileConfig:
    """Overlay a line-oriented key=value file onto a config.

    Blank lines and lines starting with '#' are skipped.  Keys name
    TileConfig fields; channel fields use a channel_ prefix.
    """
    overrides: dict = {}
    channel_overrides: dict = {}
    valid = {f.name for f in dataclasses.fields(TileConfig)}
    with open(path, "r", encoding="ascii") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key=value")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key in _CHANNEL_FIELDS:
                channel_overrides[_CHANNEL_FIELDS[key]] = int(value)
            elif key in _ENUM_FIELDS:
                try:
                    overrides[key] = _ENUM_FIELDS[key](value)
                except ValueError:
                    raise ConfigError(f"{path}:{line_no}: bad value for {key}: '{value}'") from None
            elif key in valid:
                current = getattr(cfg, key)
                if isinstance(current, bool):
                    overrides[key] = value.lower() in ("1", "true", "yes")
                elif isinstance(current, int):
                    overrides[key] = int(value)
                elif isinstance(current, float):
                    overrides[key] = float(value)
                elif isinstance(current, str):
                    overrides[key] = value
                else:
                    raise ConfigError(f"{path}:{line_no}: field '{key}' cannot be set from a file")
            else:
                raise ConfigError(f"{path}:{line_no}: unknown field '{key}'")
    if channel_overrides:
        overrides["channel"] = dataclasses.replace(cfg.channel, **channel_overrides)
    out = dataclasses.replace(cfg, **overrides)
    out.validate()
    return out


def config_dict(cfg: TileConfig) -> dict:
    """Flat JSON-friendly view of a config (for manifests)."""
    d = dataclasses.asdict(cfg)
    d["eviction_mode"] = cfg.eviction_mode.value
    d["mapping"] = cfg.mapping.value
    return d
