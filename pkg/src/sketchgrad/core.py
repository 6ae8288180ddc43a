"""Shared numeric primitives: seeded hashing, vector norms, block partitions.

Everything in this module is pure and deterministic given its inputs, so it
is safe to call concurrently from any number of threads.  All gradient
arithmetic is done in float64; 32-bit precision only appears on the wire
(see the payload serializers in :mod:`sketchgrad.sketch`,
:mod:`sketchgrad.casq` and :mod:`sketchgrad.sparse`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_MASK63 = np.uint64(0x7FFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)
_SHIFT_30 = np.uint64(30)
_SHIFT_27 = np.uint64(27)
_SHIFT_31 = np.uint64(31)
_SHIFT_63 = np.uint64(63)


def mix64(x):
    """64-bit avalanche of ``x`` (splitmix-style finalizer).

    Accepts a scalar or ndarray; returns uint64 of the same shape.  The
    mixing is bit-exact across platforms and processes, which is what makes
    hash mappings reproducible between simulated workers.
    """
    z = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):  # wraparound is the point
        z = (z ^ (z >> _SHIFT_30)) * _MIX_1
        z = (z ^ (z >> _SHIFT_27)) * _MIX_2
        return z ^ (z >> _SHIFT_31)


_DERIVE_INIT = np.uint64(0x243F6A8885A308D3)  # arbitrary non-zero start


def derive_seed(*parts) -> int:
    """Fold integer parts into a single 64-bit seed.

    Used to give every (window, cluster) or (sketch, row) pair its own
    stream while keeping all streams a pure function of one global seed.
    """
    acc = _DERIVE_INIT
    with np.errstate(over="ignore"):
        for part in parts:
            acc = mix64(acc + np.uint64(int(part) & 0xFFFFFFFFFFFFFFFF) * _GOLDEN)
    return int(acc)


def derive_seed_array(first, *parts) -> np.ndarray:
    """Vectorized :func:`derive_seed` over an array of first parts.

    ``derive_seed_array(a, p, q)[i] == derive_seed(a[i], p, q)`` for every i.
    """
    acc = np.asarray(first, dtype=np.uint64)
    with np.errstate(over="ignore"):
        acc = mix64(_DERIVE_INIT + acc * _GOLDEN)
        for part in parts:
            acc = mix64(acc + np.uint64(int(part) & 0xFFFFFFFFFFFFFFFF) * _GOLDEN)
    return acc


def _hash_words(seed, indices):
    """Raw 64-bit hash words for ``indices`` under ``seed``; both broadcast."""
    s = np.asarray(seed, dtype=np.uint64)
    idx = np.asarray(indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(s + (idx + np.uint64(1)) * _GOLDEN)


def seed_stream(master_seed: int, count: int, offset: int = 0) -> np.ndarray:
    """``count`` decorrelated 64-bit seeds derived from one master seed.

    Trial ``t`` of a Monte Carlo run gets ``seed_stream(master, n)[t]``;
    disjoint (master, offset) pairs give disjoint streams, so no trial ever
    reuses another trial's hash function.
    """
    idx = np.arange(offset, offset + count, dtype=np.uint64)
    return _hash_words(np.uint64(master_seed & 0xFFFFFFFFFFFFFFFF), idx)


def hash_buckets(seed, indices, buckets: int):
    """Vectorized bucket hash: uniform over ``[0, buckets)``.

    ``seed`` and ``indices`` broadcast against each other, so a (T, 1) seed
    column against a (1, N) index row yields a (T, N) bucket matrix in one
    call.  Bit 63 of the hash word is reserved for the sign hash, the
    remaining 63 bits select the bucket.
    """
    if buckets < 1:
        raise ValueError(f"buckets must be >= 1, got {buckets}")
    words = _hash_words(seed, indices)
    return ((words & _MASK63) % np.uint64(buckets)).astype(np.int64)


def hash_signs(seed, indices):
    """Vectorized sign hash: deterministic +-1 per (seed, index)."""
    words = _hash_words(seed, indices)
    return 1.0 - 2.0 * (words >> _SHIFT_63).astype(np.float64)


@dataclass(frozen=True)
class HashMapping:
    """Seeded uniform bucket hash (and optional sign hash).

    Realizes the random indicator projection used by every sketch without
    materializing it: ``bucket(i)`` plays the role of the single non-zero
    column in row ``i``.  With ``injective=True`` the mapping degenerates to
    ``bucket(i) = i``; this is only meaningful when the index domain fits in
    ``buckets`` and exists so that identity-compression paths can be tested
    exactly.
    """

    seed: int
    buckets: int
    signed: bool = False
    injective: bool = False

    def __post_init__(self):
        if self.buckets < 1:
            raise ValueError(f"buckets must be >= 1, got {self.buckets}")

    def bucket(self, indices):
        if self.injective:
            idx = np.asarray(indices, dtype=np.int64)
            if np.any(idx >= self.buckets) or np.any(idx < 0):
                raise ValueError("injective mapping requires indices < buckets")
            return idx
        return hash_buckets(self.seed, indices, self.buckets)

    def sign(self, indices):
        if not self.signed or self.injective:
            return np.ones(np.shape(indices), dtype=np.float64)
        return hash_signs(self.seed, indices)

    def params(self) -> tuple:
        return (self.seed, self.buckets, self.signed, self.injective)


def as_gradient(values) -> np.ndarray:
    """Validate and return a gradient vector as a float64 1-D array.

    Raises ValueError on empty input or non-finite entries.
    """
    g = np.asarray(values, dtype=np.float64)
    if g.ndim != 1:
        g = g.reshape(-1)
    if g.size < 1:
        raise ValueError("gradient vector must have at least one entry")
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient vector contains NaN or Inf")
    return g


def l2_norm(g) -> float:
    """Euclidean norm of a gradient vector."""
    return float(np.linalg.norm(as_gradient(g)))


def linf_norm(g) -> float:
    """Maximum absolute entry of a gradient vector."""
    return float(np.max(np.abs(as_gradient(g))))


@dataclass(frozen=True)
class BlockPartition:
    """Contiguous partition of ``[0, dim)`` into ``num_blocks`` blocks.

    Blocks have size ceil(dim / num_blocks); the final block may be ragged
    (shorter).  No zero padding is applied.
    """

    dim: int
    num_blocks: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if not 1 <= self.num_blocks <= self.dim:
            raise ValueError(
                f"num_blocks must be in [1, dim={self.dim}], got {self.num_blocks}"
            )

    @property
    def block_size(self) -> int:
        return -(-self.dim // self.num_blocks)

    def slices(self) -> list[slice]:
        size = self.block_size
        return [
            slice(min(b * size, self.dim), min((b + 1) * size, self.dim))
            for b in range(self.num_blocks)
        ]

    def sizes(self) -> np.ndarray:
        size = self.block_size
        starts = np.minimum(np.arange(self.num_blocks, dtype=np.int64) * size, self.dim)
        stops = np.minimum(starts + size, self.dim)
        return stops - starts

    def block_of(self, index: int) -> int:
        if not 0 <= index < self.dim:
            raise ValueError(f"index {index} outside [0, {self.dim})")
        return index // self.block_size
