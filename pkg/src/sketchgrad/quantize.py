"""Two-level stochastic quantization of gradient vectors.

Every entry is mapped to one of two symmetric levels ``{-s, +s}`` or dropped
to zero, where ``s`` is a norm of the whole vector: the Euclidean norm for
the QSGD-style scheme, the max norm for the ternary scheme.  The keep
probability of entry ``i`` is ``|g_i| / s``, which makes the quantizer
unbiased: ``E[q_i] = sign(g_i) * (|g_i| / s) * s = g_i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_gradient, l2_norm, linf_norm

NORM_KINDS = ("l2", "linf")

# 2 bits per entry (levels -1/0/+1 plus a spare code) and one float32 scale.
BITS_PER_ENTRY = 2
SCALE_BITS = 32


@dataclass(frozen=True)
class TwoLevelQuantizer:
    """Configuration of the two-level scheme.

    norm_kind: "l2" for the Euclidean-norm scale, "linf" for the max-norm
        (ternary) scale.
    seed: RNG seed; one uniform draw is consumed per entry, in index order.
    """

    norm_kind: str
    seed: int = 0

    def __post_init__(self):
        if self.norm_kind not in NORM_KINDS:
            raise ValueError(f"norm_kind must be one of {NORM_KINDS}, got {self.norm_kind!r}")


@dataclass
class ProjectionResult:
    """Outcome of one quantization: the vector, its objective, its wire cost."""

    quantized: np.ndarray
    objective: float
    bits: int


def projection_objective(g, g_hat) -> float:
    """Squared Euclidean distance between a vector and its reconstruction."""
    g = as_gradient(g)
    g_hat = as_gradient(g_hat)
    if g.size != g_hat.size:
        raise ValueError(f"dimension mismatch: {g.size} vs {g_hat.size}")
    diff = g - g_hat
    return float(diff @ diff)


def two_level_quantize(g, quantizer: TwoLevelQuantizer) -> ProjectionResult:
    """Stochastically project ``g`` onto ``{-s, 0, +s}`` per entry.

    The all-zero vector quantizes to itself.  Non-finite input raises.
    """
    g = as_gradient(g)
    scale = l2_norm(g) if quantizer.norm_kind == "l2" else linf_norm(g)
    bits = BITS_PER_ENTRY * g.size + SCALE_BITS
    if scale == 0.0:
        return ProjectionResult(np.zeros_like(g), 0.0, bits)
    keep_prob = np.abs(g) / scale
    rng = np.random.default_rng(quantizer.seed)
    draws = rng.random(g.size)
    quantized = np.where(draws < keep_prob, np.sign(g) * scale, 0.0)
    return ProjectionResult(quantized, projection_objective(g, quantized), bits)
