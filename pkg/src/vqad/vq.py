"""Learned vector quantization of feature-grid rows.

Each pyramid level owns a small codebook of feature rows (2^bitwidth x
feature_width). During training a vertex carries a logit vector over
codebook rows; inference and storage keep only the argmax index. The
straight-through lookup feeds the hard (indexed) row forward while
gradients follow the softmax-mixture path, which is what lets the
indices be learned by gradient descent at all.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Node, Tape

__all__ = [
    "VQConfig",
    "soft_features",
    "hard_features",
    "ste_lookup",
    "bake",
    "compression_ratio",
    "compression_ratio_limit",
    "init_codebooks",
    "init_logits",
    "resolve_features",
    "codebook_nbytes",
    "index_nbytes",
]


@dataclass(frozen=True)
class VQConfig:
    bitwidth: int
    feature_width: int
    levels: int

    def __post_init__(self):
        if not 1 <= self.bitwidth <= 16:
            raise ValueError("bitwidth must be in 1..16")
        if self.feature_width < 1 or self.levels < 1:
            raise ValueError("feature_width and levels must be positive")

    @property
    def rows(self) -> int:
        return 1 << self.bitwidth


def check_codebook(codebook: np.ndarray, bitwidth: int | None = None) -> np.ndarray:
    codebook = np.asarray(codebook)
    if codebook.ndim != 2:
        raise ValueError("codebook must be 2-D")
    rows = codebook.shape[0]
    if bitwidth is not None and rows != (1 << bitwidth):
        raise ValueError(f"codebook must have exactly 2^{bitwidth} rows")
    if rows & (rows - 1):
        raise ValueError("codebook row count must be a power of two")
    if not np.isfinite(codebook).all():
        raise ValueError("codebook entries must be finite")
    return codebook


def soft_features(logits: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Softmax-weighted mixture of codebook rows, ``softmax(logits) @ codebook``.

    Accepts a single logit row or a batch; softmax is applied along the
    last axis at temperature 1.
    """
    codebook = check_codebook(codebook)
    logits = np.asarray(logits)
    if logits.shape[-1] != codebook.shape[0]:
        raise ValueError("logit width must equal the codebook row count")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    weights = e / e.sum(axis=-1, keepdims=True)
    return weights @ codebook


def hard_features(indices, codebook: np.ndarray) -> np.ndarray:
    """Plain codebook lookup ``codebook[indices]`` with a strict range check."""
    codebook = check_codebook(codebook)
    indices = np.asarray(indices)
    if indices.size and (indices.min() < 0 or indices.max() >= codebook.shape[0]):
        raise IndexError(
            f"index out of range for codebook with {codebook.shape[0]} rows"
        )
    return codebook[indices]


def ste_lookup(tape: Tape, logits: Node, codebook: Node) -> Node:
    """Straight-through codebook lookup as a tape node.

    Forward: the argmax-indexed codebook row, bit-exact with
    :func:`hard_features`. Backward: gradients of the softmax mixture,
    for both the logits and the codebook.
    """
    soft_weights = tape.softmax_rows(logits)
    soft = tape.affine(soft_weights, codebook)
    hard = hard_features(bake(logits.value), codebook.value)
    return tape.straight_through(hard, soft)


def bake(logits: np.ndarray) -> np.ndarray:
    """Row-wise argmax of finite logits; ties resolve to the lowest index."""
    logits = np.asarray(logits)
    if not np.isfinite(logits).all():
        raise ValueError("logits must be finite")
    return np.argmax(logits, axis=-1).astype(np.int64)


def compression_ratio(m: int, k: int, b: int) -> float:
    """Raw half-float grid size over index-plus-one-codebook size.

    The stored total of a real multi-level model is slightly larger
    (one codebook per level plus the decoder weights), so end-to-end
    ratios come out below this figure.
    """
    if m <= 0 or k <= 0 or b <= 0:
        raise ValueError("m, k, b must be positive")
    return 16.0 * m * k / (m * b + k * (1 << b))


def compression_ratio_limit(k: int, b: int) -> float:
    """Large-grid limit of :func:`compression_ratio`."""
    return 16.0 * k / b


def init_codebooks(cfg: VQConfig, seed: int = 0, std: float = 0.01, dtype=np.float32):
    """One small-normal codebook per level."""
    rng = np.random.default_rng(seed)
    return [
        (rng.standard_normal((cfg.rows, cfg.feature_width)) * std).astype(dtype)
        for _ in range(cfg.levels)
    ]


def init_logits(vertex_counts, cfg: VQConfig, seed: int = 0, std: float = 0.01,
                dtype=np.float32):
    """Small-normal logits avoid locking the argmax in before training."""
    rng = np.random.default_rng(seed)
    return [
        (rng.standard_normal((m, cfg.rows)) * std).astype(dtype)
        for m in vertex_counts
    ]


def resolve_features(pyramid, codebooks):
    """Materialize quantized storage into a raw-feature pyramid.

    Soft storage resolves through the argmax (the hard path is the
    inference path once training has started); baked storage indexes
    directly. The result shares grid structure with the input.
    """
    if pyramid.storage_kind == "raw":
        return pyramid
    if pyramid.storage_kind is None:
        raise ValueError("pyramid has no payload to resolve")
    if codebooks is None or len(codebooks) != pyramid.config.levels:
        raise ValueError("one codebook per level required")
    feats = []
    for level in range(pyramid.config.levels):
        if pyramid.storage_kind == "soft":
            indices = bake(pyramid.levels[level])
        else:
            indices = pyramid.levels[level]
        feats.append(hard_features(indices, codebooks[level]))
    out = pyramid.copy_structure()
    out.set_storage("raw", feats)
    return out


def codebook_nbytes(b: int, k: int) -> int:
    """Half-precision codebook payload for one level."""
    return (1 << b) * k * 2


def index_nbytes(m: int, b: int) -> int:
    """Bit-packed index payload for one level."""
    return (m * b + 7) // 8
