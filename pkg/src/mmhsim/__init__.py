"""Cycle-level simulator of a decoupled multiply/accumulate spatial
accelerator for sparse matrix multiplication, plus its workload compiler,
functional reference kernels, and metrics pipeline."""

from .sparse import (
    Layout,
    SparseMatrix,
    BloatReport,
    bloat_analysis,
    convert_layout,
    from_coo,
    from_dense,
    identity,
    load_matrix_market,
    oracle_spgemm,
    relu,
)
from .isa import Mmh4Instruction, HaccInstruction, encode, decode
from .compiler import CompiledWorkload, compile_spgemm, compile_gcn_layer
from .mapping import MappingPolicy, PolicyKind
from .config import TileConfig, ChannelModel, EvictionMode, from_preset
from .engine import run

__all__ = [
    "Layout",
    "SparseMatrix",
    "BloatReport",
    "bloat_analysis",
    "convert_layout",
    "from_coo",
    "from_dense",
    "identity",
    "load_matrix_market",
    "oracle_spgemm",
    "relu",
    "Mmh4Instruction",
    "HaccInstruction",
    "encode",
    "decode",
    "CompiledWorkload",
    "compile_spgemm",
    "compile_gcn_layer",
    "MappingPolicy",
    "PolicyKind",
    "TileConfig",
    "ChannelModel",
    "EvictionMode",
    "from_preset",
    "run",
]
