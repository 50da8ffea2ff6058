"""Work-to-resource mapping policies for accumulation traffic.

Every accumulate instruction carries a 32-bit tag identifying its output
element; the mapping policy turns (tag, row block) into a target unit in
[0, N).  Five policies are provided:

  RING          round-robin over distinct tags, memoized so repeats agree
  PRIME_MODULAR (tag mod p) mod N with a fixed Mersenne prime p
  RANDOM_TABLE  a memoized uniform draw per tag (the lookup table grows
                with the number of distinct tags, which is the point)
  DRHM_LOWER    reseeded multiplicative hash of the low (32 - k) tag bits
  DRHM_UPPER    same, of the tag with its low k bits cleared

The reseeded variants draw a fresh odd 32-bit multiplier (gamma) per row
block, so the tag-to-target function changes at every block boundary while
staying consistent for any given (tag, row block).  The masked tag is
multiplied by gamma modulo 2**32 and the product is range-reduced to
[0, N) through its high bits: target = (product * N) >> 32.  High-bit
reduction is what makes the scheme insensitive to stride and column
structure in the tag stream; reducing through the low bits would pin every
power-of-two-strided stream to a handful of targets no matter the seed.

Consistency contract: map_tag is a pure function of (policy state, tag,
row_block).  The memoized policies mutate their table on first sight of a
tag, so in concurrent settings all calls must be funneled through one
serialization point (the dispatcher does this in the engine).
"""

from __future__ import annotations

import enum

MASK32 = 0xFFFFFFFF
MASK64 = 0xFFFFFFFFFFFFFFFF

# Fixed modulus for PRIME_MODULAR: 2^31 - 1.
PRIME_MODULUS = 2147483647

_XS_MULT = 2685821657736338717
_SEED_FALLBACK = 0x9E3779B97F4A7C15


class PolicyKind(enum.Enum):
    RING = "ring"
    PRIME_MODULAR = "prime"
    RANDOM_TABLE = "random"
    DRHM_LOWER = "drhm-lower"
    DRHM_UPPER = "drhm-upper"


ALL_KINDS = tuple(PolicyKind)


class Xorshift64Star:
    """xorshift64* generator; reference outputs are frozen in the tests."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = (seed & MASK64) or _SEED_FALLBACK

    def next_u64(self) -> int:
        s = self.state
        s ^= s >> 12
        s = (s ^ (s << 25)) & MASK64
        s ^= s >> 27
        self.state = s
        return (s * _XS_MULT) & MASK64


class MappingPolicy:
    """One mapping policy instance with its seed table and memo state."""

    def __init__(
        self,
        kind: PolicyKind,
        n_targets: int,
        k_bits: int = 16,
        rng_seed: int = 1,
    ):
        if n_targets < 1:
            raise ValueError("n_targets must be >= 1")
        if not (0 <= k_bits < 32):
            raise ValueError("k_bits must be in [0, 32)")
        self.kind = kind
        self.n_targets = n_targets
        self.k_bits = k_bits
        self.rng_seed = rng_seed
        self.seed_table: list[int] = []
        self._rng = Xorshift64Star(rng_seed)
        self._table: dict[int, int] = {}
        self._ring_cursor = 0

    def reseed(self, row_block: int) -> None:
        """Append the gamma for the next row block; blocks seed in order."""
        if row_block != len(self.seed_table):
            raise ValueError(
                f"out-of-order reseed: row block {row_block}, table holds {len(self.seed_table)}"
            )
        gamma = (self._rng.next_u64() | 1) & MASK32
        self.seed_table.append(gamma)

    def ensure_row_block(self, row_block: int) -> None:
        """Reseed forward until the given row block has a gamma."""
        while len(self.seed_table) <= row_block:
            self.reseed(len(self.seed_table))

    def map_tag(self, tag: int, row_block: int = 0) -> int:
        """Map one tag to a target index in [0, n_targets)."""
        kind = self.kind
        n = self.n_targets
        if kind is PolicyKind.PRIME_MODULAR:
            return (tag % PRIME_MODULUS) % n
        if kind is PolicyKind.RING:
            hit = self._table.get(tag)
            if hit is None:
                hit = self._ring_cursor
                self._ring_cursor = (hit + 1) % n
                self._table[tag] = hit
            return hit
        if kind is PolicyKind.RANDOM_TABLE:
            hit = self._table.get(tag)
            if hit is None:
                hit = self._rng.next_u64() % n
                self._table[tag] = hit
            return hit
        if row_block >= len(self.seed_table):
            raise ValueError(f"row block {row_block} has no seed yet")
        gamma = self.seed_table[row_block]
        k = self.k_bits
        if kind is PolicyKind.DRHM_LOWER:
            masked = ((tag << k) & MASK32) >> k
        else:
            masked = ((tag >> k) << k) & MASK32
        product = (masked * gamma) & MASK32
        return (product * n) >> 32

    def table_size(self) -> int:
        """Entries memoized so far (RING and RANDOM_TABLE only)."""
        return len(self._table)

    def heatmap(self, tags, row_blocks=None) -> list[int]:
        """Count mapped tags per target over a stream.

        row_blocks, when given, is a parallel iterable of row-block ids;
        seeds are created on demand.  Without it every tag uses block 0.
        """
        counts = [0] * self.n_targets
        if row_blocks is None:
            self.ensure_row_block(0)
            for tag in tags:
                counts[self.map_tag(tag, 0)] += 1
        else:
            for tag, rb in zip(tags, row_blocks):
                self.ensure_row_block(rb)
                counts[self.map_tag(tag, rb)] += 1
        return counts


def write_heatmap_csv(path: str, counts: list[int]) -> None:
    """One row per target: index, count."""
    with open(path, "w", encoding="ascii") as f:
        f.write("target,count\n")
        for i, c in enumerate(counts):
            f.write(f"{i},{c}\n")
