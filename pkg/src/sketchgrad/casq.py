"""Cluster-aware sketch quantization: compress, merge, decompress, error feedback.

A gradient vector is split into value clusters; each cluster gets its own
averaged-bucket sketch whose size reflects the cluster's weight.  A payload
carries the per-cluster bucket means plus the encoded cluster assignment.
Payloads built in the same clustering window (same centers, same bucket
budget, same hash seeds) merge across workers by averaging the bucket means
and summing per-entry cluster votes, so a parameter server can decompress
once instead of once per worker.

Convention: the error-feedback pipeline folds the learning rate into the
compressor input (``g_tilde = lr * grad + carried_error``), and the
parameter update applies the decompressed estimate directly.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .cluster import (
    DEFAULT_REFRESH_INTERVAL,
    DEFAULT_SAMPLE_CAP,
    allocate_buckets,
    assign_clusters,
    cluster_stats,
    kmeans_1d,
    sample_for_clustering,
)
from .core import HashMapping, as_gradient, derive_seed

MAGIC = b"CASQ"
WIRE_VERSION = 1


def cluster_hash_seed(global_seed: int, window_id: int, cluster_id: int) -> int:
    """Hash seed shared by all workers for one (window, cluster) pair."""
    return derive_seed(global_seed, window_id, cluster_id)


def label_bits(num_clusters: int) -> int:
    """Bits per entry of the assignment code: ceil(log2 K)."""
    if num_clusters < 1:
        raise ValueError("num_clusters must be >= 1")
    return max(0, (num_clusters - 1).bit_length())


def pack_labels(labels: np.ndarray, num_clusters: int) -> bytes:
    """Bit-pack base-K labels, little-endian bit order within bytes."""
    bits = label_bits(num_clusters)
    if bits == 0:
        return b""
    labels = np.asarray(labels, dtype=np.uint64)
    shifts = np.arange(bits, dtype=np.uint64)
    bitmat = ((labels[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bitmat.reshape(-1), bitorder="little").tobytes()


def unpack_labels(data: bytes, dim: int, num_clusters: int) -> np.ndarray:
    bits = label_bits(num_clusters)
    if bits == 0:
        return np.zeros(dim, dtype=np.int64)
    raw = np.frombuffer(data, dtype=np.uint8)
    bitmat = np.unpackbits(raw, count=dim * bits, bitorder="little").reshape(dim, bits)
    weights = (1 << np.arange(bits)).astype(np.int64)
    return bitmat @ weights


@dataclass
class CasPayload:
    """One worker's (or a merged) cluster-aware sketch of a gradient vector.

    ``bucket_means[k]`` holds the averaged-bucket values of cluster ``k``.
    For a single worker the assignment is a label vector; once merged, it is
    a per-entry vote count matrix (how many workers put the entry in each
    cluster).  ``global_seed`` is shared out-of-band context, not wire data.
    """

    window_id: int
    dim: int
    bucket_counts: np.ndarray
    bucket_means: list[np.ndarray]
    workers: int
    global_seed: int
    labels: np.ndarray | None = None
    votes: np.ndarray | None = None
    injective: bool = False

    def __post_init__(self):
        self.bucket_counts = np.asarray(self.bucket_counts, dtype=np.int64)
        if len(self.bucket_means) != self.num_clusters:
            raise ValueError("bucket_means length must equal the cluster count")
        if (self.labels is None) == (self.votes is None):
            raise ValueError("exactly one of labels or votes must be set")

    @property
    def num_clusters(self) -> int:
        return int(self.bucket_counts.size)

    def vote_matrix(self) -> np.ndarray:
        """Per-entry cluster votes; one-hot when the payload is unmerged."""
        if self.votes is not None:
            return self.votes
        eye = np.zeros((self.dim, self.num_clusters), dtype=np.int64)
        eye[np.arange(self.dim), self.labels] = 1
        return eye

    def compat_key(self) -> dict:
        return {
            "window_id": self.window_id,
            "dim": self.dim,
            "bucket_counts": tuple(int(c) for c in self.bucket_counts),
            "global_seed": self.global_seed,
            "injective": self.injective,
        }

    def serialized_nbytes(self) -> int:
        k = self.num_clusters
        total_buckets = int(self.bucket_counts.sum())
        assign = (
            -(-self.dim * label_bits(k) // 8)
            if self.workers == 1
            else 4 * self.dim * k
        )
        return 4 + 1 + 4 * 8 + 4 * k + 4 * total_buckets + assign

    def to_bytes(self) -> bytes:
        if self.injective:
            raise ValueError("injective payloads have no wire representation")
        parts = [
            struct.pack(
                "<4sBQQQQ",
                MAGIC,
                WIRE_VERSION,
                self.window_id,
                self.dim,
                self.num_clusters,
                self.workers,
            ),
            self.bucket_counts.astype("<u4").tobytes(),
        ]
        for means in self.bucket_means:
            parts.append(np.asarray(means).astype("<f4").tobytes())
        if self.workers == 1:
            parts.append(pack_labels(self.labels, self.num_clusters))
        else:
            parts.append(self.votes.astype("<u4").tobytes())
        return b"".join(parts)


def payload_from_bytes(data: bytes, global_seed: int) -> CasPayload:
    """Decode a payload; the hash seed context is supplied by the caller."""
    if len(data) < 5 or data[:4] != MAGIC:
        raise ValueError("not a cas payload (bad magic)")
    if data[4] != WIRE_VERSION:
        raise ValueError(f"unsupported cas wire version {data[4]}")
    window_id, dim, k, workers = struct.unpack_from("<QQQQ", data, 5)
    off = 5 + 32
    counts = np.frombuffer(data, dtype="<u4", count=k, offset=off).astype(np.int64)
    off += 4 * k
    means = []
    for mk in counts:
        means.append(
            np.frombuffer(data, dtype="<f4", count=int(mk), offset=off).astype(np.float64)
        )
        off += 4 * int(mk)
    if workers == 1:
        nbytes = -(-dim * label_bits(k) // 8)
        labels = unpack_labels(data[off : off + nbytes], dim, k)
        return CasPayload(window_id, dim, counts, means, 1, global_seed, labels=labels)
    votes = (
        np.frombuffer(data, dtype="<u4", count=dim * k, offset=off)
        .astype(np.int64)
        .reshape(dim, k)
    )
    return CasPayload(window_id, dim, counts, means, int(workers), global_seed, votes=votes)


def cas_compress(values, labels, bucket_counts, window_id: int, global_seed: int,
                 injective: bool = False) -> CasPayload:
    """Sketch each cluster of ``values`` into its own averaged-bucket array.

    ``labels`` assigns every entry to a cluster; ``bucket_counts[k]`` is the
    bucket budget of cluster ``k`` (0 drops the cluster's values).  Bucket
    means are formed at insertion time, so the payload already carries the
    averaged values.
    """
    values = as_gradient(values)
    labels = np.asarray(labels, dtype=np.int64)
    bucket_counts = np.asarray(bucket_counts, dtype=np.int64)
    if labels.size != values.size:
        raise ValueError(
            f"dimension mismatch: {values.size} values, {labels.size} labels"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= bucket_counts.size):
        raise ValueError("label outside [0, num_clusters)")
    dim = values.size
    means = []
    for k, mk in enumerate(bucket_counts):
        mk = int(mk)
        if mk == 0:
            means.append(np.zeros(0, dtype=np.float64))
            continue
        mapping = HashMapping(
            cluster_hash_seed(global_seed, window_id, k), mk, injective=injective
        )
        members = np.flatnonzero(labels == k)
        sums = np.zeros(mk, dtype=np.float64)
        occupancy = np.zeros(mk, dtype=np.int64)
        if members.size:
            buckets = mapping.bucket(members)
            sums = np.bincount(buckets, weights=values[members], minlength=mk)
            occupancy = np.bincount(buckets, minlength=mk)
        means.append(sums / np.maximum(occupancy, 1))
    return CasPayload(
        window_id, dim, bucket_counts, means, 1, global_seed,
        labels=labels, injective=injective,
    )


def cas_merge(payloads) -> CasPayload:
    """Merge payloads from one clustering window.

    Bucket means are averaged (weighted by each payload's worker
    multiplicity, so merging is associative); votes are summed.  Raises on
    the first mismatched compatibility field.
    """
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
    first = payloads[0]
    total_workers = sum(p.workers for p in payloads)
    means = []
    for k in range(first.num_clusters):
        acc = np.zeros_like(first.bucket_means[k])
        for p in payloads:
            acc = acc + p.workers * p.bucket_means[k]
        means.append(acc / total_workers)
    votes = payloads[0].vote_matrix().copy()
    for p in payloads[1:]:
        votes += p.vote_matrix()
    return CasPayload(
        first.window_id, first.dim, first.bucket_counts, means,
        total_workers, first.global_seed, votes=votes, injective=first.injective,
    )


def cas_decompress(payload: CasPayload) -> np.ndarray:
    """Estimate the (worker-averaged) gradient from a payload.

    Entry ``j`` receives the vote-weighted average of the bucket means it
    hashes to in each voted cluster; an entry all of whose votes fall on
    zero-bucket clusters decodes to zero.
    """
    votes = payload.vote_matrix()
    out = np.zeros(payload.dim, dtype=np.float64)
    idx = np.arange(payload.dim)
    for k, mk in enumerate(payload.bucket_counts):
        mk = int(mk)
        if mk == 0:
            continue
        column = votes[:, k]
        if not column.any():
            continue
        mapping = HashMapping(
            cluster_hash_seed(payload.global_seed, payload.window_id, k),
            mk,
            injective=payload.injective,
        )
        out += column * payload.bucket_means[k][mapping.bucket(idx)]
    return out / payload.workers


def cas_comm_bits(payload: CasPayload) -> int:
    """Exact wire size of the payload, in bits."""
    return 8 * payload.serialized_nbytes()


def merged_assignment_bits(dim: int, workers: int, total_buckets: int) -> int:
    """Downstream cost of the two-cluster merged-assignment variant.

    The server returns merged bucket means plus, per entry, the vote count
    for one of the two clusters, encoded in ceil(log2 W) bits.
    """
    if workers < 2:
        raise ValueError("merged-assignment encoding needs workers >= 2")
    per_entry = max(1, (workers - 1).bit_length())
    return dim * per_entry + 32 * total_buckets


@dataclass
class ErrorState:
    """Per-worker error-compensation vector (starts at zero)."""

    e: np.ndarray
    worker_id: int = 0

    @classmethod
    def zeros(cls, dim: int, worker_id: int = 0) -> "ErrorState":
        return cls(np.zeros(dim, dtype=np.float64), worker_id)


def ef_step(state: ErrorState, grad, lr: float, compressor):
    """One local error-feedback step through ``compressor``.

    Folds the learning rate into the compressed quantity, compresses,
    decompresses its own (single-worker) payload and carries the residual
    forward.  Returns (payload, estimate, new state).  In a multi-worker
    loop the residual is taken against the merged estimate instead; see
    :func:`sketchgrad.distsim.run_sim`.
    """
    grad = as_gradient(grad)
    if grad.size != state.e.size:
        raise ValueError("error state dimension does not match gradient")
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    g_tilde = lr * grad + state.e
    payload = compressor.compress(g_tilde)
    g_hat = compressor.decompress(compressor.merge([payload]))
    return payload, g_hat, ErrorState(g_tilde - g_hat, state.worker_id)


class CasqCompressor:
    """Windowed cluster-aware sketch pipeline.

    ``prepare`` refits the shared cluster model and bucket allocation at
    window boundaries (every ``refresh_interval`` steps) from a reference
    vector; between refreshes every compression reuses the stored centers,
    budgets and hash seeds verbatim, which is what keeps concurrent workers'
    payloads mergeable.
    """

    mergeable = True
    name = "casq"

    def __init__(self, dim: int, num_clusters: int = 4, total_buckets: int | None = None,
                 seed: int = 0, refresh_interval: int = DEFAULT_REFRESH_INTERVAL,
                 sample_cap: int = DEFAULT_SAMPLE_CAP, injective: bool = False):
        if total_buckets is None:
            total_buckets = max(num_clusters, dim // 16)
        if total_buckets < num_clusters:
            raise ValueError(
                f"total_buckets {total_buckets} below num_clusters {num_clusters}"
            )
        self.dim = dim
        self.num_clusters = num_clusters
        self.total_buckets = total_buckets
        self.seed = seed
        self.refresh_interval = refresh_interval
        self.sample_cap = sample_cap
        self.injective = injective
        self._model = None
        self._bucket_counts = None
        self._window_id = 0

    def prepare(self, reference, step: int = 0):
        """Refit the shared model if ``step`` opens a new window."""
        if self._model is not None and step % self.refresh_interval != 0:
            return
        reference = as_gradient(reference)
        sample = sample_for_clustering(
            reference, self.sample_cap, seed=derive_seed(self.seed, step, 1)
        )
        self._model = kmeans_1d(
            sample, self.num_clusters, seed=derive_seed(self.seed, step, 2)
        )
        stats = cluster_stats(reference, assign_clusters(reference, self._model))
        counts = allocate_buckets(stats, self.total_buckets).counts
        # every cluster keeps at least one bucket so that another worker's
        # members of a locally-empty cluster are not dropped outright
        self._bucket_counts = np.maximum(counts, 1)
        self._window_id = step

    def compress(self, values) -> CasPayload:
        if self._model is None:
            self.prepare(values, 0)
        labels = assign_clusters(values, self._model).labels
        return cas_compress(
            values, labels, self._bucket_counts, self._window_id, self.seed,
            injective=self.injective,
        )

    def merge(self, payloads) -> CasPayload:
        return cas_merge(payloads)

    def decompress(self, payload) -> np.ndarray:
        return cas_decompress(payload)

    def payload_nbytes(self, payload) -> int:
        return payload.serialized_nbytes()
