"""Scalar clustering of gradient values and adaptive bucket allocation.

Gradients are grouped into value clusters so that each cluster can get its
own sketch sized to how much it matters.  Cluster assignment is
sign-constrained: an entry goes to the nearest center *of its own sign*
whenever one exists, because collapsing entries across zero would flip
update directions.  Bucket budgets are split by a weight combining cluster
population, magnitude and value entropy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import as_gradient

DEFAULT_SAMPLE_CAP = 4096
DEFAULT_REFRESH_INTERVAL = 64
ENTROPY_BINS = 32


@dataclass
class ClusterModel:
    """Sorted scalar cluster centers plus the refresh cadence."""

    centers: np.ndarray
    refresh_interval: int = DEFAULT_REFRESH_INTERVAL

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1)
        if self.centers.size < 1:
            raise ValueError("cluster model needs at least one center")
        if np.any(np.diff(self.centers) < 0):
            raise ValueError("centers must be sorted ascending")

    @property
    def num_clusters(self) -> int:
        return int(self.centers.size)


@dataclass
class ClusterAssignment:
    """Per-entry labels plus (optionally filled) per-cluster statistics."""

    labels: np.ndarray
    num_clusters: int
    sizes: np.ndarray | None = field(default=None)
    means: np.ndarray | None = field(default=None)
    stds: np.ndarray | None = field(default=None)
    entropies: np.ndarray | None = field(default=None)


@dataclass
class BucketAllocation:
    """Bucket count per cluster; empty clusters get zero."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def sample_for_clustering(g, max_samples: int = DEFAULT_SAMPLE_CAP, seed: int = 0) -> np.ndarray:
    """Uniform sample without replacement of at most ``max_samples`` values."""
    g = as_gradient(g)
    if g.size <= max_samples:
        return g.copy()
    rng = np.random.default_rng(seed)
    picked = rng.choice(g.size, size=max_samples, replace=False)
    return g[picked]


def kmeans_1d(sample, num_clusters: int, max_iters: int = 64, tol: float = 1e-10,
              seed: int = 0) -> ClusterModel:
    """Lloyd iterations on scalars with kmeans++ seeding.

    Degenerate inputs shrink the model: with fewer distinct values than
    requested clusters (or when a cluster empties during iteration) the
    returned model has fewer centers.  Centers come back sorted.
    """
    sample = as_gradient(sample)
    if num_clusters < 1:
        raise ValueError(f"num_clusters must be >= 1, got {num_clusters}")
    distinct = np.unique(sample)
    k = min(num_clusters, distinct.size)
    if k == distinct.size:
        return ClusterModel(distinct)

    rng = np.random.default_rng(seed)
    centers = np.empty(k, dtype=np.float64)
    centers[0] = sample[rng.integers(sample.size)]
    d2 = (sample - centers[0]) ** 2
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers = centers[:j]
            break
        centers[j] = sample[rng.choice(sample.size, p=d2 / total)]
        d2 = np.minimum(d2, (sample - centers[j]) ** 2)
    centers = np.unique(centers)

    for _ in range(max_iters):
        boundaries = (centers[:-1] + centers[1:]) / 2.0
        labels = np.searchsorted(boundaries, sample)
        counts = np.bincount(labels, minlength=centers.size)
        sums = np.bincount(labels, weights=sample, minlength=centers.size)
        occupied = counts > 0
        new_centers = sums[occupied] / counts[occupied]
        new_centers.sort()
        if new_centers.size == centers.size:
            shift = np.max(np.abs(new_centers - centers))
            centers = new_centers
            if shift < tol:
                break
        else:
            centers = new_centers
    return ClusterModel(np.unique(centers))


def assign_clusters(g, model: ClusterModel) -> ClusterAssignment:
    """Label every entry with its nearest same-sign center.

    Entries with no center of matching sign (and exact zeros) fall back to
    the globally nearest center.  Ties break toward the smaller center
    index.
    """
    g = as_gradient(g)
    centers = model.centers
    dist = np.abs(g[:, None] - centers[None, :])
    compatible = np.sign(centers)[None, :] == np.sign(g)[:, None]
    masked = np.where(compatible, dist, np.inf)
    labels = np.argmin(masked, axis=1)
    no_match = ~compatible.any(axis=1) | (g == 0.0)
    if np.any(no_match):
        labels[no_match] = np.argmin(dist[no_match], axis=1)
    return ClusterAssignment(labels.astype(np.int64), model.num_clusters)


def _histogram_entropy(values: np.ndarray, bins: int = ENTROPY_BINS) -> float:
    if values.size < 2:
        return 0.0
    lo, hi = values.min(), values.max()
    if lo == hi:
        return 0.0
    counts, _ = np.histogram(values, bins=bins, range=(lo, hi))
    p = counts[counts > 0] / values.size
    return float(-(p * np.log(p)).sum())


def cluster_stats(g, assignment: ClusterAssignment) -> ClusterAssignment:
    """Fill exact per-cluster count, mean, std and histogram entropy.

    Std is the population standard deviation, computed two-pass.  Entropy
    uses a fixed-bin equal-width histogram over the cluster's own value
    range (single-valued clusters score zero).  Empty clusters report zeros
    throughout.
    """
    g = as_gradient(g)
    k = assignment.num_clusters
    labels = assignment.labels
    if labels.size != g.size:
        raise ValueError("assignment does not match vector length")
    sizes = np.bincount(labels, minlength=k)
    sums = np.bincount(labels, weights=g, minlength=k)
    means = np.divide(sums, np.maximum(sizes, 1))
    sq_dev = np.bincount(labels, weights=(g - means[labels]) ** 2, minlength=k)
    stds = np.sqrt(np.divide(sq_dev, np.maximum(sizes, 1)))
    entropies = np.array(
        [_histogram_entropy(g[labels == j]) if sizes[j] else 0.0 for j in range(k)]
    )
    return ClusterAssignment(labels, k, sizes, means, stds, entropies)


def allocation_weights(assignment: ClusterAssignment) -> np.ndarray:
    """Per-cluster weight sqrt(size) * |mean| * (1 + entropy).

    The square root keeps one huge near-zero cluster from starving the
    high-magnitude ones.  If every weight degenerates to zero the cluster
    sizes themselves are used.
    """
    if assignment.sizes is None:
        raise ValueError("assignment statistics not filled; call cluster_stats first")
    w = np.sqrt(assignment.sizes) * np.abs(assignment.means) * (1.0 + assignment.entropies)
    if w.sum() == 0.0:
        w = assignment.sizes.astype(np.float64)
    return w


def allocate_buckets(assignment: ClusterAssignment, total_budget: int) -> BucketAllocation:
    """Split ``total_budget`` buckets across clusters proportionally to weight.

    Every non-empty cluster receives at least one bucket; rounding excess or
    deficit is settled against the largest-weight clusters so the counts sum
    exactly to the budget.  Empty clusters get zero.
    """
    weights = allocation_weights(assignment)
    nonempty = assignment.sizes > 0
    n_nonempty = int(nonempty.sum())
    if total_budget < n_nonempty:
        raise ValueError(
            f"budget {total_budget} below the {n_nonempty} non-empty clusters"
        )
    counts = np.zeros(weights.size, dtype=np.int64)
    w = np.where(nonempty, weights, 0.0)
    counts[nonempty] = [
        max(1, round(total_budget * wk / w.sum())) for wk in w[nonempty]
    ]
    # settle rounding against the heaviest clusters, capped at size >= 1
    order = np.argsort(-w, kind="stable")
    order = [j for j in order if nonempty[j]]
    pos = 0
    while counts.sum() != total_budget:
        j = order[pos % len(order)]
        if counts.sum() < total_budget:
            counts[j] += 1
        elif counts[j] > 1:
            counts[j] -= 1
        pos += 1
    return BucketAllocation(counts)


def clusters_for_bits(bits: int) -> int:
    """Cluster count for a b-bit assignment code (2**bits clusters)."""
    if bits < 0:
        raise ValueError("bits must be >= 0")
    return 1 << bits
