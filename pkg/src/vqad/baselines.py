"""Post-hoc and non-learned feature-grid compressors.

These are the reference points the learned quantizer is judged against:
an eigenbasis low-rank approximation of the feature rows, k-means
vector quantization applied after training, and frozen uniform-random
indices that emulate a hash-style table (the codebook still trains, the
assignment does not).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "KLTTransform",
    "KMeansResult",
    "klt_fit",
    "klt_transform",
    "klt_truncate",
    "kmeans_vq",
    "random_index_grid",
]


@dataclass
class KLTTransform:
    """Eigenbasis of the feature covariance, strongest directions first."""

    basis: np.ndarray  # (k, k), orthonormal columns
    mean: np.ndarray  # (k,)
    eigenvalues: np.ndarray  # (k,), descending, >= 0

    @property
    def width(self) -> int:
        return self.basis.shape[0]


@dataclass
class KMeansResult:
    codebook: np.ndarray  # (2^b, k)
    assignments: np.ndarray  # (m,)
    inertia: float  # final within-cluster sum of squares
    inertia_history: list[float]


def klt_fit(rows: np.ndarray) -> KLTTransform:
    """Fit the decorrelating eigenbasis of centered feature rows.

    The covariance uses the 1/m normalization so that the mean squared
    reconstruction error of a truncation equals the mean of the dropped
    eigenvalues. Each eigenvector's sign is fixed by making its largest-
    magnitude component positive.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError("expected (m, k) feature rows")
    if not np.isfinite(rows).all():
        raise ValueError("feature rows must be finite")
    mean = rows.mean(axis=0)
    centered = rows - mean
    cov = centered.T @ centered / rows.shape[0]
    eigenvalues, vectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = np.maximum(eigenvalues[order], 0.0)
    vectors = vectors[:, order]
    # Deterministic sign: largest-|.| component of each eigenvector positive.
    for j in range(vectors.shape[1]):
        pivot = np.argmax(np.abs(vectors[:, j]))
        if vectors[pivot, j] < 0:
            vectors[:, j] = -vectors[:, j]
    return KLTTransform(basis=vectors, mean=mean, eigenvalues=eigenvalues)


def klt_transform(rows: np.ndarray, transform: KLTTransform, retained: int) -> np.ndarray:
    """Leading transform coefficients of each row, shape (m, retained)."""
    _check_retained(transform, retained)
    return (np.asarray(rows, dtype=np.float64) - transform.mean) @ transform.basis[:, :retained]


def klt_truncate(rows: np.ndarray, transform: KLTTransform, retained: int) -> np.ndarray:
    """Reconstruction from the leading *retained* coefficients.

    Stored size scales as retained/width of the raw rows; retaining all
    coefficients is a lossless (to rounding) round trip.
    """
    coeffs = klt_transform(rows, transform, retained)
    return transform.mean + coeffs @ transform.basis[:, :retained].T


def _check_retained(transform: KLTTransform, retained: int):
    if not 1 <= retained <= transform.width:
        raise ValueError(
            f"retained coefficients must be in 1..{transform.width}, got {retained}"
        )


def kmeans_vq(
    rows: np.ndarray,
    bitwidth: int,
    max_iters: int = 100,
    seed: int = 0,
    tol: float = 0.0,
) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding over 2^bitwidth clusters.

    Deterministic for a given seed. Clusters that empty out are reseeded
    from the point currently farthest from its centroid, so the codebook
    always keeps its full row count.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError("expected non-empty (m, k) feature rows")
    n_clusters = 1 << bitwidth
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(rows, n_clusters, rng)

    history: list[float] = []
    assignments = None
    for _ in range(max_iters):
        dist = _sq_distances(rows, centers)
        assignments = dist.argmin(axis=1)
        inertia = float(dist[np.arange(len(rows)), assignments].sum())
        history.append(inertia)
        new_centers = centers.copy()
        for c in range(n_clusters):
            members = assignments == c
            if members.any():
                new_centers[c] = rows[members].mean(axis=0)
            else:
                farthest = np.argmax(dist[np.arange(len(rows)), assignments])
                new_centers[c] = rows[farthest]
        if np.allclose(new_centers, centers, rtol=0.0, atol=tol):
            centers = new_centers
            break
        centers = new_centers

    dist = _sq_distances(rows, centers)
    assignments = dist.argmin(axis=1)
    inertia = float(dist[np.arange(len(rows)), assignments].sum())
    history.append(inertia)
    return KMeansResult(
        codebook=centers,
        assignments=assignments.astype(np.int64),
        inertia=inertia,
        inertia_history=history,
    )


def _kmeans_pp_init(rows: np.ndarray, n_clusters: int, rng) -> np.ndarray:
    m = rows.shape[0]
    centers = np.empty((n_clusters, rows.shape[1]), dtype=rows.dtype)
    centers[0] = rows[rng.integers(m)]
    closest = ((rows - centers[0]) ** 2).sum(axis=1)
    for c in range(1, n_clusters):
        total = closest.sum()
        if total <= 0.0:
            # Fewer distinct rows than clusters: reuse existing points.
            centers[c] = rows[rng.integers(m)]
            continue
        probs = closest / total
        pick = np.searchsorted(np.cumsum(probs), rng.random(), side="right")
        centers[c] = rows[min(pick, m - 1)]
        closest = np.minimum(closest, ((rows - centers[c]) ** 2).sum(axis=1))
    return centers


def _sq_distances(rows: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # ||x - c||^2 expanded; clamp tiny negatives from cancellation.
    d = (
        (rows**2).sum(axis=1)[:, None]
        - 2.0 * rows @ centers.T
        + (centers**2).sum(axis=1)[None, :]
    )
    return np.maximum(d, 0.0)


def random_index_grid(m: int, bitwidth: int, seed: int = 0) -> np.ndarray:
    """Frozen uniform indices in {0 .. 2^bitwidth - 1}.

    Emulates hash-style assignment: the index grid never trains, only
    the codebook it points into does.
    """
    if m < 0:
        raise ValueError("m must be non-negative")
    rng = np.random.default_rng(seed)
    return rng.integers(0, 1 << bitwidth, size=m, dtype=np.int64)
