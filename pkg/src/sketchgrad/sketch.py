"""Sketch data structures for gradient compression.

Three linear sketches share one hashing substrate:

* :class:`CountMinArray` - a single bucket array with a sum query.  A query
  for index ``i`` returns the full sum of every value that hashed into
  ``i``'s bucket (including ``i`` itself), so the estimate is biased upward
  by the colliding mass.
* :class:`CountSketchTable` - ``rows`` independent signed bucket arrays; a
  query returns the median of the sign-corrected bucket values, which is an
  unbiased estimate because collision noise is sign-symmetric.
* :class:`AveragedSketch` - a bucket array that stores per-bucket means
  (running sums plus occupancy counts), the primitive behind the
  cluster-aware compressor in :mod:`sketchgrad.casq`.

All three are linear images of the inserted vector, so sketches built with
identical parameters merge by element-wise addition; ``merge`` enforces the
parameter check.  Inserts mutate ``self`` (single-writer); queries and
merges never mutate and are safe to run concurrently on frozen sketches.
"""

from __future__ import annotations

import struct

import numpy as np

from .core import HashMapping, as_gradient, derive_seed

MAGIC = b"SKCH"
WIRE_VERSION = 1
_KIND_COUNT_MIN = 0
_KIND_COUNT_SKETCH = 1
_KIND_AVERAGED = 2


class CountMinArray:
    """Single-array count-min sketch with a bucket-sum query.

    The query deliberately returns the bucket *sum*, not the row minimum:
    the sum form is the linear estimator whose first and second moments the
    verification suite checks, and it is the one that merges exactly.
    """

    def __init__(self, buckets: int, seed: int, dim: int, injective: bool = False):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.mapping = HashMapping(seed, buckets, signed=False, injective=injective)
        self.dim = dim
        self.values = np.zeros(buckets, dtype=np.float64)
        self._index_cache = None

    @property
    def buckets(self) -> int:
        return self.mapping.buckets

    def _indices(self):
        if self._index_cache is None:
            self._index_cache = self.mapping.bucket(np.arange(self.dim))
        return self._index_cache

    def insert(self, g) -> "CountMinArray":
        """Accumulate a full gradient vector; linear in the input."""
        g = as_gradient(g)
        if g.size != self.dim:
            raise ValueError(f"dimension mismatch: sketch dim {self.dim}, vector {g.size}")
        self.values += np.bincount(self._indices(), weights=g, minlength=self.buckets)
        return self

    def query(self) -> np.ndarray:
        """Estimate the full vector: entry i gets its bucket's sum."""
        return self.values[self._indices()]

    def params(self) -> tuple:
        return ("count-min", self.dim, self.mapping.params())

    def to_bytes(self) -> bytes:
        _reject_injective(self)
        header = _pack_header(_KIND_COUNT_MIN, self.dim, (self.buckets,), self.mapping.seed)
        return header + self.values.astype("<f4").tobytes()


class CountSketchTable:
    """rows x cols signed sketch with a median query."""

    def __init__(self, rows: int, cols: int, seed: int, dim: int, injective: bool = False):
        if rows < 1 or cols < 1:
            raise ValueError(f"rows and cols must be >= 1, got {rows}x{cols}")
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.rows = rows
        self.cols = cols
        self.seed = seed
        self.dim = dim
        self.injective = injective
        self.row_maps = [
            HashMapping(derive_seed(seed, j), cols, signed=True, injective=injective)
            for j in range(rows)
        ]
        self.table = np.zeros((rows, cols), dtype=np.float64)

    def insert(self, indices, values) -> "CountSketchTable":
        """Add sign-weighted values at ``indices``; zero values are no-ops."""
        idx = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        vals = np.atleast_1d(np.asarray(values, dtype=np.float64))
        if idx.shape != vals.shape:
            raise ValueError("indices and values must have matching shapes")
        if idx.size and (idx.min() < 0 or idx.max() >= self.dim):
            raise ValueError(f"index outside [0, {self.dim})")
        for j, mapping in enumerate(self.row_maps):
            np.add.at(self.table[j], mapping.bucket(idx), mapping.sign(idx) * vals)
        return self

    def query(self, indices) -> np.ndarray:
        """Median over rows of the sign-corrected bucket values.

        For an even row count the lower median (element floor((rows-1)/2) of
        the sorted estimates) is returned; the default row count is odd so
        the question does not normally arise.
        """
        idx = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        if idx.size and (idx.min() < 0 or idx.max() >= self.dim):
            raise ValueError(f"index outside [0, {self.dim})")
        estimates = np.stack(
            [m.sign(idx) * self.table[j, m.bucket(idx)] for j, m in enumerate(self.row_maps)]
        )
        estimates.sort(axis=0)
        return estimates[(self.rows - 1) // 2]

    def query_one(self, index: int) -> float:
        return float(self.query([index])[0])

    def params(self) -> tuple:
        return ("count-sketch", self.dim, self.rows, self.cols, self.seed, self.injective)

    def to_bytes(self) -> bytes:
        _reject_injective(self)
        header = _pack_header(_KIND_COUNT_SKETCH, self.dim, (self.rows, self.cols), self.seed)
        return header + self.table.astype("<f4").tobytes()


class AveragedSketch:
    """Bucket array storing per-bucket means of the inserted subset.

    Internally keeps running sums and occupancy counts so merges stay exact;
    the stored bucket value (see :meth:`means`) is sum/count, or zero for a
    bucket nothing hashed into.
    """

    def __init__(self, buckets: int, seed: int, dim: int, injective: bool = False):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.mapping = HashMapping(seed, buckets, signed=False, injective=injective)
        self.dim = dim
        self.sums = np.zeros(buckets, dtype=np.float64)
        self.counts = np.zeros(buckets, dtype=np.int64)

    @property
    def buckets(self) -> int:
        return self.mapping.buckets

    def insert(self, indices, values) -> "AveragedSketch":
        """Insert a subset of (index, value) pairs; indices must be unique."""
        idx = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        vals = np.atleast_1d(np.asarray(values, dtype=np.float64))
        if idx.shape != vals.shape:
            raise ValueError("indices and values must have matching shapes")
        if idx.size and (idx.min() < 0 or idx.max() >= self.dim):
            raise ValueError(f"index outside [0, {self.dim})")
        if np.unique(idx).size != idx.size:
            raise ValueError("duplicate index in averaged-sketch insert")
        buckets = self.mapping.bucket(idx)
        self.sums += np.bincount(buckets, weights=vals, minlength=self.buckets)
        self.counts += np.bincount(buckets, minlength=self.buckets)
        return self

    def means(self) -> np.ndarray:
        """Per-bucket means; empty buckets report 0."""
        return self.sums / np.maximum(self.counts, 1)

    def query(self, indices) -> np.ndarray:
        """Bucket mean seen by each queried index."""
        idx = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        return self.means()[self.mapping.bucket(idx)]

    def params(self) -> tuple:
        return ("averaged", self.dim, self.mapping.params())

    def to_bytes(self) -> bytes:
        _reject_injective(self)
        header = _pack_header(_KIND_AVERAGED, self.dim, (self.buckets,), self.mapping.seed)
        return (
            header
            + self.sums.astype("<f4").tobytes()
            + self.counts.astype("<u4").tobytes()
        )


def merge(a, b):
    """Element-wise merge of two sketches built with identical parameters.

    Returns a new sketch; inputs are untouched.  Merging is commutative and
    associative (exactly so for integer-valued contents).
    """
    if type(a) is not type(b):
        raise ValueError(f"cannot merge {type(a).__name__} with {type(b).__name__}")
    if a.params() != b.params():
        raise ValueError(f"incompatible sketch parameters: {a.params()} vs {b.params()}")
    if isinstance(a, CountMinArray):
        out = CountMinArray(a.buckets, a.mapping.seed, a.dim, a.mapping.injective)
        out.values = a.values + b.values
        return out
    if isinstance(a, CountSketchTable):
        out = CountSketchTable(a.rows, a.cols, a.seed, a.dim, a.injective)
        out.table = a.table + b.table
        return out
    if isinstance(a, AveragedSketch):
        out = AveragedSketch(a.buckets, a.mapping.seed, a.dim, a.mapping.injective)
        out.sums = a.sums + b.sums
        out.counts = a.counts + b.counts
        return out
    raise TypeError(f"unsupported sketch type {type(a).__name__}")


def _pack_header(kind: int, dim: int, shape: tuple, seed: int) -> bytes:
    parts = [struct.pack("<4sBB", MAGIC, WIRE_VERSION, kind), struct.pack("<Q", dim)]
    parts += [struct.pack("<Q", s) for s in shape]
    parts.append(struct.pack("<Q", seed & 0xFFFFFFFFFFFFFFFF))
    return b"".join(parts)


def _reject_injective(sk):
    # The wire format carries only (seed, shape); the injective degenerate
    # mapping is a local testing aid and has no encoding.
    injective = sk.injective if hasattr(sk, "injective") else sk.mapping.injective
    if injective:
        raise ValueError("injective sketches have no wire representation")


def from_bytes(data: bytes):
    """Reconstruct a sketch from its wire form.

    Values come back as float64 holding exactly the float32 wire values, so
    re-serializing reproduces the input bytes bit for bit.
    """
    if len(data) < 6 or data[:4] != MAGIC:
        raise ValueError("not a sketch payload (bad magic)")
    version, kind = data[4], data[5]
    if version != WIRE_VERSION:
        raise ValueError(f"unsupported sketch wire version {version}")
    off = 6
    (dim,) = struct.unpack_from("<Q", data, off)
    off += 8
    if kind == _KIND_COUNT_SKETCH:
        rows, cols = struct.unpack_from("<QQ", data, off)
        off += 16
    else:
        (buckets,) = struct.unpack_from("<Q", data, off)
        off += 8
    (seed,) = struct.unpack_from("<Q", data, off)
    off += 8

    if kind == _KIND_COUNT_MIN:
        sk = CountMinArray(buckets, seed, dim)
        sk.values = np.frombuffer(data, dtype="<f4", count=buckets, offset=off).astype(np.float64)
        return sk
    if kind == _KIND_COUNT_SKETCH:
        sk = CountSketchTable(rows, cols, seed, dim)
        flat = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=off)
        sk.table = flat.astype(np.float64).reshape(rows, cols)
        return sk
    if kind == _KIND_AVERAGED:
        sk = AveragedSketch(buckets, seed, dim)
        sk.sums = np.frombuffer(data, dtype="<f4", count=buckets, offset=off).astype(np.float64)
        off += 4 * buckets
        sk.counts = np.frombuffer(data, dtype="<u4", count=buckets, offset=off).astype(np.int64)
        return sk
    raise ValueError(f"unknown sketch kind byte {kind}")
