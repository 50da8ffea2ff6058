"""Command-line front end: compile workloads, run and sweep simulations,
and report partial-product bloat for datasets.

Exit codes: 0 success, 1 usage error, 2 validation error (bad files,
unknown presets, malformed configs), 3 simulation integrity failure
(oracle mismatch, conservation violation, deadlock).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import tempfile

from . import engine
from .compiler import (
    CompileError,
    compile_gcn_layer,
    compile_spgemm,
    save_workload,
)
from .config import (
    ConfigError,
    EvictionMode,
    PRESETS,
    TileConfig,
    apply_config_file,
    config_dict,
    from_preset,
)
from .mapping import PolicyKind
from .memsys import SimulationFault
from .sparse import (
    Layout,
    MatrixMarketError,
    SparseMatrix,
    bloat_analysis,
    convert_layout,
    load_matrix_market,
    oracle_spgemm,
    relu,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_INTEGRITY = 3

OUTPUT_ROOT_ENV = "MMHSIM_OUTPUT_ROOT"


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


class IntegrityFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load(path: str, layout: Layout) -> SparseMatrix:
    try:
        return load_matrix_market(path, layout)
    except OSError as exc:
        raise ValidationError(f"cannot read '{path}': {exc.strerror}") from exc
    except MatrixMarketError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _resolve_config(args) -> TileConfig:
    try:
        cfg = from_preset(args.preset)
        if getattr(args, "config", None):
            cfg = apply_config_file(cfg, args.config)
        overrides = {}
        if getattr(args, "policy", None):
            overrides["mapping"] = PolicyKind(args.policy)
        if getattr(args, "eviction", None):
            overrides["eviction_mode"] = EvictionMode(args.eviction)
        if getattr(args, "mmh_width", None):
            overrides["mmh_width"] = args.mmh_width
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
        cfg.validate()
        return cfg
    except (ConfigError, ValueError, OSError) as exc:
        raise ValidationError(str(exc)) from exc


def _out_dir(args, default_name: str) -> str:
    root = args.out or os.environ.get(OUTPUT_ROOT_ENV) or "."
    path = os.path.join(root, default_name) if args.out is None else args.out
    os.makedirs(path, exist_ok=True)
    return path


def _workload_hashes(workload) -> dict[str, str]:
    with tempfile.TemporaryDirectory() as tmp:
        sp = os.path.join(tmp, "w.mmhs")
        ip = os.path.join(tmp, "w.img")
        save_workload(workload, sp, ip)
        return {
            "stream_sha256": hashlib.sha256(open(sp, "rb").read()).hexdigest(),
            "image_sha256": hashlib.sha256(open(ip, "rb").read()).hexdigest(),
        }


def _matrices_equal(result: SparseMatrix, oracle: SparseMatrix) -> bool:
    if (
        result.n_rows != oracle.n_rows
        or result.n_cols != oracle.n_cols
        or result.offsets != oracle.offsets
        or result.minor_indices != oracle.minor_indices
    ):
        return False
    for got, want in zip(result.values, oracle.values):
        if got != want and abs(got - want) > 1e-9 * max(1.0, abs(want)):
            return False
    return True


def _run_one(workload, cfg, seed: int, out_dir: str, oracle: SparseMatrix, workers: int = 1):
    try:
        result, report = engine.run(workload, cfg, run_seed=seed, workers=workers)
    except (engine.SimulationError, SimulationFault) as exc:
        raise IntegrityFailure(str(exc)) from exc
    if not _matrices_equal(result, oracle):
        raise IntegrityFailure("simulated output does not match the functional reference")
    os.makedirs(out_dir, exist_ok=True)
    paths = report.save(out_dir)
    manifest = {
        "config": config_dict(cfg),
        "seed": seed,
        "workload": _workload_hashes(workload),
        "metrics": {k: os.path.basename(v) for k, v in paths.items()},
        "total_cycles": report.total_cycles,
        "gops": report.gops,
        "oracle_check": "pass",
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="ascii") as f:
        f.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return result, report


def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    out_dir = _out_dir(args, "run")
    if args.gcn:
        if not (args.a and args.x and args.w):
            raise UsageError("--gcn needs --a, --x and --w")
        a = _load(args.a, Layout.CSC)
        x = _load(args.x, Layout.CSR)
        w = _load(args.w, Layout.CSR)
        try:
            first, second = compile_gcn_layer(a, x, w, width=cfg.mmh_width)
        except CompileError as exc:
            raise ValidationError(str(exc)) from exc
        p_oracle = oracle_spgemm(a, x)
        _run_one(first, cfg, args.seed, os.path.join(out_dir, "aggregation"), p_oracle, args.workers)
        out_oracle = oracle_spgemm(p_oracle, w)
        result, report = _run_one(
            second, cfg, args.seed, os.path.join(out_dir, "combination"), out_oracle, args.workers
        )
        final = relu(result)
        if not _matrices_equal(final, relu(out_oracle)):
            raise IntegrityFailure("layer output does not match the functional reference")
        print(f"layer ok: output {final.n_rows}x{final.n_cols}, nnz {final.nnz}; "
              f"combination cycles {report.total_cycles}")
        return EXIT_OK
    if not (args.a and args.b):
        raise UsageError("run needs --a and --b (or --gcn with --a/--x/--w)")
    a = _load(args.a, Layout.CSC)
    b = _load(args.b, Layout.CSR)
    try:
        workload = compile_spgemm(a, b, width=cfg.mmh_width)
    except CompileError as exc:
        raise ValidationError(str(exc)) from exc
    oracle = oracle_spgemm(a, b)
    result, report = _run_one(workload, cfg, args.seed, out_dir, oracle, args.workers)
    print(
        f"ok: {result.n_rows}x{result.n_cols} nnz {result.nnz}; "
        f"cycles {report.total_cycles}; partial products {report.pp_count}; "
        f"{report.gops:.3f} GOP/s"
    )
    return EXIT_OK


def cmd_compile(args) -> int:
    cfg = _resolve_config(args)
    a = _load(args.a, Layout.CSC)
    b = _load(args.b, Layout.CSR)
    try:
        workload = compile_spgemm(a, b, width=cfg.mmh_width)
    except CompileError as exc:
        raise ValidationError(str(exc)) from exc
    out_dir = _out_dir(args, "compiled")
    sp = os.path.join(out_dir, "workload.mmhs")
    ip = os.path.join(out_dir, "memory.img")
    save_workload(workload, sp, ip)
    print(
        f"compiled {len(workload.instructions)} instructions, "
        f"{workload.expected_pp_count} partial products, "
        f"image {workload.image.total_size} bytes -> {sp}, {ip}"
    )
    return EXIT_OK


_SWEEP_COLUMNS = (
    "preset", "policy", "eviction", "total_cycles", "gops", "pp_count", "output_nnz",
    "mmh_cpi_mean", "hacc_cpi_mean", "occupancy_peak", "occupancy_mean", "dispatch_stalls",
)


def cmd_sweep(args) -> int:
    a = _load(args.a, Layout.CSC)
    b = _load(args.b, Layout.CSR)
    presets = args.presets.split(",")
    policies = args.policies.split(",")
    modes = args.modes.split(",")
    for name in presets:
        if name not in PRESETS:
            raise ValidationError(f"unknown preset '{name}'")
    try:
        policy_kinds = [PolicyKind(p) for p in policies]
        mode_kinds = [EvictionMode(m) for m in modes]
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    out_dir = _out_dir(args, "sweep")
    combos = sorted(
        (preset, policy.value, mode.value)
        for preset in presets
        for policy in policy_kinds
        for mode in mode_kinds
    )
    rows = []
    for preset, policy, mode in combos:
        cfg = dataclasses.replace(
            from_preset(preset), mapping=PolicyKind(policy), eviction_mode=EvictionMode(mode)
        )
        try:
            workload = compile_spgemm(a, b, width=cfg.mmh_width)
        except CompileError as exc:
            raise ValidationError(str(exc)) from exc
        sub = os.path.join(out_dir, f"{preset}_{policy}_{mode}")
        _, report = _run_one(workload, cfg, args.seed, sub, oracle_spgemm(a, b), args.workers)
        rows.append(
            (
                preset, policy, mode, report.total_cycles, f"{report.gops:.6f}",
                report.pp_count, report.output_nnz, f"{report.mmh_cpi_mean:.6f}",
                f"{report.hacc_cpi_mean:.6f}", report.occupancy_peak,
                f"{report.occupancy_mean:.6f}", report.dispatch_stalls,
            )
        )
    csv_path = os.path.join(out_dir, "sweep.csv")
    with open(csv_path, "w", encoding="ascii") as f:
        f.write(",".join(_SWEEP_COLUMNS) + "\n")
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")
    print(f"{len(rows)} runs -> {csv_path}")
    return EXIT_OK


def cmd_bloat(args) -> int:
    print(f"{'dataset':<24} {'nodes':>9} {'edges':>10} {'sparsity_pct':>12} {'bloat_pct':>12}")
    for path in args.paths:
        m = _load(path, Layout.CSR)
        if m.n_rows != m.n_cols:
            raise ValidationError(f"{path}: bloat analysis expects a square operand, got {m.n_rows}x{m.n_cols}")
        rep = bloat_analysis(m, m)
        name = os.path.splitext(os.path.basename(path))[0]
        sparsity = (1.0 - m.nnz / (m.n_rows * m.n_cols)) * 100.0 if m.n_rows else 0.0
        bloat = "undefined" if rep.undefined else f"{rep.bloat_percent:.4f}"
        print(f"{name:<24} {m.n_rows:>9} {m.nnz:>10} {sparsity:>12.4f} {bloat:>12}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="mmhsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--preset", default="tile16", help="tile4, tile16, or tile64")
        p.add_argument("--config", help="key=value overrides, one per line")
        p.add_argument("--policy", choices=[k.value for k in PolicyKind], help="mapping policy")
        p.add_argument("--eviction", choices=[m.value for m in EvictionMode], help="eviction mode")
        p.add_argument("--mmh-width", type=int, choices=[1, 2, 4, 8], dest="mmh_width")
        p.add_argument("--seed", type=int, default=1)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", help=f"output directory (default from ${OUTPUT_ROOT_ENV} or cwd)")

    p_run = sub.add_parser("run", help="compile, simulate, and verify one workload")
    p_run.add_argument("--a", help="left operand (Matrix Market)")
    p_run.add_argument("--b", help="right operand (Matrix Market)")
    p_run.add_argument("--gcn", action="store_true", help="run a graph-convolution layer")
    p_run.add_argument("--x", help="feature matrix for --gcn")
    p_run.add_argument("--w", help="weight matrix for --gcn")
    add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_compile = sub.add_parser("compile", help="lower a workload to stream + image files")
    p_compile.add_argument("--a", required=True)
    p_compile.add_argument("--b", required=True)
    add_common(p_compile)
    p_compile.set_defaults(func=cmd_compile)

    p_sweep = sub.add_parser("sweep", help="run a preset/policy/eviction cross product")
    p_sweep.add_argument("--a", required=True)
    p_sweep.add_argument("--b", required=True)
    p_sweep.add_argument("--presets", default="tile4,tile16")
    p_sweep.add_argument("--policies", default="drhm-lower")
    p_sweep.add_argument("--modes", default="rolling,barrier")
    p_sweep.add_argument("--seed", type=int, default=1)
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.add_argument("--out")
    p_sweep.set_defaults(func=cmd_sweep)

    p_bloat = sub.add_parser("bloat", help="partial-product bloat for square datasets (A times A)")
    p_bloat.add_argument("paths", nargs="+")
    p_bloat.set_defaults(func=cmd_bloat)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except IntegrityFailure as exc:
        print(f"integrity failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY


if __name__ == "__main__":
    sys.exit(main())
