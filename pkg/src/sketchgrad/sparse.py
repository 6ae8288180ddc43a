"""Block-sparse gradient reduction: block Top-K, bitmap, signed sketch.

A gradient is cut into contiguous blocks; the K blocks of largest Euclidean
norm survive.  Surviving indices are recorded in a one-bit-per-block bitmap
and their values go into a signed count-sketch table.  Both halves merge
under element-wise AllReduce operators (bitwise OR for the bitmap, addition
for the table), so aggregating W workers' payloads is equivalent to
sketching the sum of their sparsified gradients.

The sketch budget is expressed through ``size_ratio`` (lambda): total table
cells = size_ratio * (non-zero fraction) * dim, split across ``rows`` rows.
Compression wins whenever size_ratio < 1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import BlockPartition, as_gradient
from .sketch import CountSketchTable, merge as sketch_merge

MAGIC = b"S2SK"
WIRE_VERSION = 1
DEFAULT_ROWS = 3
DEFAULT_SIZE_RATIO = 0.5


@dataclass(frozen=True)
class BlockMask:
    """Bitmap over a block partition; flag 1 marks a transmitted block."""

    partition: BlockPartition
    flags: np.ndarray

    def __post_init__(self):
        flags = np.asarray(self.flags, dtype=bool)
        if flags.size != self.partition.num_blocks:
            raise ValueError("flag count must equal the block count")
        object.__setattr__(self, "flags", flags)

    def selected_indices(self) -> np.ndarray:
        slices = self.partition.slices()
        picked = [np.arange(s.start, s.stop) for b, s in enumerate(slices) if self.flags[b]]
        if not picked:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(picked).astype(np.int64)

    def selected_fraction(self) -> float:
        """Fraction of coordinates inside selected blocks (the alpha of sizing)."""
        return float(self.partition.sizes()[self.flags].sum()) / self.partition.dim

    def union(self, other: "BlockMask") -> "BlockMask":
        if self.partition != other.partition:
            raise ValueError("incompatible payloads: field 'partition' differs")
        return BlockMask(self.partition, self.flags | other.flags)

    def to_bytes(self) -> bytes:
        return np.packbits(self.flags.astype(np.uint8), bitorder="little").tobytes()


def mask_from_bytes(data: bytes, partition: BlockPartition) -> BlockMask:
    raw = np.frombuffer(data, dtype=np.uint8)
    flags = np.unpackbits(raw, count=partition.num_blocks, bitorder="little").astype(bool)
    return BlockMask(partition, flags)


def block_topk(g, num_blocks: int, k: int) -> BlockMask:
    """Select the ``k`` blocks of largest L2 norm (ties to the lower index)."""
    g = as_gradient(g)
    partition = BlockPartition(g.size, num_blocks)
    if not 1 <= k <= num_blocks:
        raise ValueError(f"k must be in [1, {num_blocks}], got {k}")
    norms = np.array([np.linalg.norm(g[s]) for s in partition.slices()])
    order = np.argsort(-norms, kind="stable")  # stable sort keeps lower index first on ties
    flags = np.zeros(num_blocks, dtype=bool)
    flags[order[:k]] = True
    return BlockMask(partition, flags)


def sketch_cols(size_ratio: float, alpha: float, dim: int, rows: int = DEFAULT_ROWS) -> int:
    """Columns per row so that rows*cols ~= size_ratio * alpha * dim cells."""
    if size_ratio <= 0:
        raise ValueError("size_ratio must be positive")
    cells = size_ratio * alpha * dim
    return max(1, -(-int(np.ceil(cells)) // rows))


@dataclass
class SparsePayload:
    """Bitmap plus signed sketch of the values inside selected blocks.

    ``workers`` counts how many single-worker payloads were merged in; it is
    bookkeeping context for the averaging division, not wire data.
    """

    mask: BlockMask
    table: CountSketchTable
    alpha: float
    size_ratio: float
    workers: int = 1

    def compat_key(self) -> dict:
        return {
            "partition": self.mask.partition,
            "sketch_params": self.table.params(),
        }

    def serialized_nbytes(self) -> int:
        bitmap_nbytes = -(-self.mask.partition.num_blocks // 8)
        return 4 + 1 + 6 * 8 + bitmap_nbytes + 4 * self.table.rows * self.table.cols

    def to_bytes(self) -> bytes:
        if self.table.injective:
            raise ValueError("injective payloads have no wire representation")
        header = struct.pack(
            "<4sBQQQQQQ",
            MAGIC,
            WIRE_VERSION,
            self.mask.partition.dim,
            self.mask.partition.num_blocks,
            self.table.rows,
            self.table.cols,
            self.table.seed & 0xFFFFFFFFFFFFFFFF,
            0,  # reserved
        )
        return header + self.mask.to_bytes() + self.table.table.astype("<f4").tobytes()


def sparse_payload_from_bytes(data: bytes) -> SparsePayload:
    if len(data) < 5 or data[:4] != MAGIC:
        raise ValueError("not a sparse payload (bad magic)")
    if data[4] != WIRE_VERSION:
        raise ValueError(f"unsupported sparse wire version {data[4]}")
    dim, blocks, rows, cols, seed, _ = struct.unpack_from("<QQQQQQ", data, 5)
    off = 5 + 48
    partition = BlockPartition(dim, blocks)
    bitmap_nbytes = -(-blocks // 8)
    mask = mask_from_bytes(data[off : off + bitmap_nbytes], partition)
    off += bitmap_nbytes
    table = CountSketchTable(rows, cols, seed, dim)
    flat = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=off)
    table.table = flat.astype(np.float64).reshape(rows, cols)
    alpha = mask.selected_fraction()
    ratio = rows * cols / (alpha * dim) if alpha > 0 else float("inf")
    return SparsePayload(mask, table, alpha, ratio)


def sparse_compress(g, mask: BlockMask, rows: int, cols: int, seed: int,
                    injective: bool = False) -> SparsePayload:
    """Insert every selected-block entry into a fresh signed sketch.

    Zeros inside selected blocks are mathematically no-ops and are skipped;
    entries outside the mask are never touched.
    """
    g = as_gradient(g)
    if g.size != mask.partition.dim:
        raise ValueError(
            f"dimension mismatch: mask dim {mask.partition.dim}, vector {g.size}"
        )
    table = CountSketchTable(rows, cols, seed, g.size, injective=injective)
    idx = mask.selected_indices()
    if idx.size:
        vals = g[idx]
        nz = vals != 0.0
        table.insert(idx[nz], vals[nz])
    alpha = mask.selected_fraction()
    ratio = rows * cols / (alpha * g.size) if alpha > 0 else float("inf")
    return SparsePayload(mask, table, alpha, ratio)


def sparse_merge(payloads) -> SparsePayload:
    """OR the bitmaps, sum the sketch tables, re-derive alpha and lambda."""
    payloads = list(payloads)
    if not payloads:
        raise ValueError("nothing to merge")
    ref = payloads[0].compat_key()
    for p in payloads[1:]:
        key = p.compat_key()
        for name, value in ref.items():
            if key[name] != value:
                raise ValueError(
                    f"incompatible payloads: field {name!r} differs "
                    f"({value!r} vs {key[name]!r})"
                )
    mask = payloads[0].mask
    table = payloads[0].table
    for p in payloads[1:]:
        mask = mask.union(p.mask)
        table = sketch_merge(table, p.table)
    alpha = mask.selected_fraction()
    dim = mask.partition.dim
    ratio = table.rows * table.cols / (alpha * dim) if alpha > 0 else float("inf")
    return SparsePayload(mask, table, alpha, ratio, workers=sum(p.workers for p in payloads))


def sparse_decompress(payload: SparsePayload, workers: int | None = None) -> np.ndarray:
    """Query every selected index and divide by the worker count.

    The merged table holds the sum over workers, so the division yields the
    average gradient used by the optimizer; unselected entries stay zero.
    ``workers`` defaults to the payload's own merge count.
    """
    if workers is None:
        workers = payload.workers
    if workers < 1:
        raise ValueError("workers must be >= 1")
    out = np.zeros(payload.mask.partition.dim, dtype=np.float64)
    idx = payload.mask.selected_indices()
    if idx.size:
        out[idx] = payload.table.query(idx) / workers
    return out


def sparsify(g, num_blocks: int, k: int) -> np.ndarray:
    """Zero out everything outside the top-k blocks (dense reference form)."""
    g = as_gradient(g)
    mask = block_topk(g, num_blocks, k)
    out = np.zeros_like(g)
    idx = mask.selected_indices()
    out[idx] = g[idx]
    return out


def topk_delta_check(g, num_blocks: int, k: int) -> tuple[float, float]:
    """Energy kept by block top-k versus the k/b floor.

    Returns (kept_ratio, bound) where kept_ratio = |sparse(g)|^2 / |g|^2 and
    bound = k / num_blocks; the ratio is defined as 1 for the zero vector.
    The inequality kept_ratio >= bound holds deterministically because the
    selected blocks are the largest-norm ones.
    """
    g = as_gradient(g)
    bound = k / num_blocks
    total = float(g @ g)
    if total == 0.0:
        return 1.0, bound
    kept = sparsify(g, num_blocks, k)
    return float(kept @ kept) / total, bound


@dataclass
class CommCost:
    """Wire cost of one payload against dense and coordinate baselines."""

    payload_bits: int
    dense_bits: int
    coordinate_bits: int
    value_bits: int
    bitmap_bits: int
    header_bits: int

    @property
    def ratio_vs_dense(self) -> float:
        return self.payload_bits / self.dense_bits

    @property
    def ratio_vs_coordinate(self) -> float:
        return self.payload_bits / self.coordinate_bits


def sparse_comm_bits(payload: SparsePayload) -> CommCost:
    """Account the payload's bits: bitmap + 32-bit table cells + header.

    The coordinate baseline transmits each selected value as 32 bits plus a
    ceil(log2 dim)-bit index.
    """
    part = payload.mask.partition
    bitmap_bits = part.num_blocks
    value_bits = 32 * payload.table.rows * payload.table.cols
    header_bits = 8 * (4 + 1 + 6 * 8)
    payload_bits = 8 * payload.serialized_nbytes()
    nnz = int(part.sizes()[payload.mask.flags].sum())
    index_bits = max(1, (part.dim - 1).bit_length())
    coordinate_bits = nnz * (32 + index_bits)
    return CommCost(
        payload_bits=payload_bits,
        dense_bits=32 * part.dim,
        coordinate_bits=coordinate_bits,
        value_bits=value_bits,
        bitmap_bits=bitmap_bits,
        header_bits=header_bits,
    )


class SparseSketchCompressor:
    """Block top-k plus signed-sketch pipeline for the simulator."""

    mergeable = True
    name = "sparse"

    def __init__(self, dim: int, num_blocks: int, topk_blocks: int,
                 rows: int = DEFAULT_ROWS, size_ratio: float = DEFAULT_SIZE_RATIO,
                 seed: int = 0, injective: bool = False):
        self.dim = dim
        self.num_blocks = num_blocks
        self.topk_blocks = topk_blocks
        self.rows = rows
        self.size_ratio = size_ratio
        self.seed = seed
        self.injective = injective
        alpha = BlockPartition(dim, num_blocks).sizes()[:topk_blocks].sum() / dim
        self.cols = sketch_cols(size_ratio, float(alpha), dim, rows)

    def prepare(self, reference, step: int = 0):
        return None  # stateless between iterations

    def compress(self, values) -> SparsePayload:
        mask = block_topk(values, self.num_blocks, self.topk_blocks)
        return sparse_compress(
            values, mask, self.rows, self.cols, self.seed, injective=self.injective
        )

    def merge(self, payloads) -> SparsePayload:
        return sparse_merge(payloads)

    def decompress(self, payload) -> np.ndarray:
        return sparse_decompress(payload)

    def payload_nbytes(self, payload) -> int:
        return payload.serialized_nbytes()
