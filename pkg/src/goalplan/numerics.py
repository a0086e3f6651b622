"""Shared numeric utilities: stable activations, sinusoidal embedding, k-means."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EMB_BASE = 1.0e4  # conventional transformer frequency base


def softmax(x: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over the last axis; safe for huge logits."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Overflow-free logistic: computed via exp(-|x|) on both branches."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def sinusoidal_embed(value: float, dim: int) -> np.ndarray:
    """Interleaved (sin, cos) pairs of value / omega_k on geometric omega.

    omega_k = EMB_BASE ** (2k / dim) for k = 0 .. dim/2 - 1, so the first
    pair oscillates at unit rate and later pairs ever slower.  All entries
    lie in [-1, 1]; value=0 yields the alternating (0, 1) pattern.
    """
    if dim < 2 or dim % 2 != 0:
        raise ValueError(f"embedding dim must be even and >= 2, got {dim}")
    half = dim // 2
    ang = float(value) * EMB_BASE ** (-2.0 * np.arange(half) / dim)
    out = np.empty(dim)
    out[0::2] = np.sin(ang)
    out[1::2] = np.cos(ang)
    return out


@dataclass
class KMeansResult:
    centroids: np.ndarray  # (k, d)
    labels: np.ndarray  # (n,)
    inertia_history: list  # assignment-step objective per iteration, non-increasing


def kmeans(points, k: int, seed: int, max_iter: int = 100) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding on a fixed-seed generator.

    Deterministic per seed.  Empty clusters are re-seeded on the point
    currently farthest from its centroid, which never increases the
    objective.  Stops at convergence (stable assignment and centroids) or
    after ``max_iter`` iterations.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"points must be (n, d), got shape {pts.shape}")
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must satisfy 1 <= k <= {n}, got {k}")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(pts, k, rng)
    history: list[float] = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
        labels = d2.argmin(axis=1)
        per_point = d2[np.arange(n), labels]
        history.append(float(per_point.sum()))
        new = centroids.copy()
        for j in range(k):
            mask = labels == j
            if mask.any():
                new[j] = pts[mask].mean(axis=0)
            else:
                new[j] = pts[per_point.argmax()]
        if np.array_equal(new, centroids):
            break
        centroids = new
    return KMeansResult(centroids=centroids, labels=labels, inertia_history=history)


def _kmeanspp_init(pts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = pts.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((pts - pts[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining mass at already-chosen points (duplicates)
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, ((pts - pts[idx]) ** 2).sum(axis=1))
    return pts[chosen].copy()
