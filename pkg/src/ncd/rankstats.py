"""Pairwise pseudo-label generation.

Two vectors are judged similar by comparing their top-k coordinate index
sets: the hard score is 1 iff the sets coincide, the soft score is the
shared fraction c/k. Cosine-similarity labelers (thresholded or raw) and a
mixed labeler (positives from one source, negatives from another) are the
baselines trained against the ranking ones.

All functions are pure and operate on numpy arrays; ties in the top-k are
broken toward the lowest index so results are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MODES = ("hard", "soft")


@dataclass(frozen=True)
class RankConfig:
    """Top-k size and hard/soft mode for ranking-statistics labels."""

    k: int
    mode: str = "soft"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")


@dataclass
class PairwiseLabelMatrix:
    """M x M soft labels in [0, 1] plus a participation mask.

    labels[i, j] is the pseudo-label for the pair (i, j); mask[i, j] is False
    for pairs excluded from the loss. Both are symmetric with unit diagonal.
    """

    labels: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.labels.ndim != 2 or self.labels.shape[0] != self.labels.shape[1]:
            raise ValueError(f"labels must be square, got shape {self.labels.shape}")
        if self.mask.shape != self.labels.shape:
            raise ValueError("mask shape must match labels shape")
        if self.labels.size and (self.labels.min() < 0.0 or self.labels.max() > 1.0):
            raise ValueError("labels must lie in [0, 1]")

    @property
    def size(self) -> int:
        return self.labels.shape[0]


def _as_vector(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def top_k_index_set(v, k: int) -> np.ndarray:
    """Indices of the k largest entries of v, ties broken by lowest index.

    Returned sorted ascending (the canonical form of the index set).
    """
    v = _as_vector(v, "v")
    if not 1 <= k <= v.shape[0]:
        raise ValueError(f"k={k} out of range for vector of dimension {v.shape[0]}")
    # stable argsort of -v keeps equal entries in index order
    order = np.argsort(-v, kind="stable")
    return np.sort(order[:k])


def soft_rs(z_i, z_j, k: int) -> float:
    """Shared top-k fraction |top_k(z_i) & top_k(z_j)| / k, in {0, 1/k, ..., 1}."""
    a = _as_vector(z_i, "z_i")
    b = _as_vector(z_j, "z_j")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    shared = np.intersect1d(top_k_index_set(a, k), top_k_index_set(b, k))
    return shared.size / k


def hard_rs(z_i, z_j, k: int) -> int:
    """1 iff the top-k index sets of the two vectors are identical, else 0."""
    return int(soft_rs(z_i, z_j, k) == 1.0)


def _top_k_indicator(Z: np.ndarray, k: int) -> np.ndarray:
    order = np.argsort(-Z, axis=1, kind="stable")
    ind = np.zeros(Z.shape, dtype=np.float64)
    ind[np.arange(Z.shape[0])[:, None], order[:, :k]] = 1.0
    return ind


def pairwise_label_matrix(Z, cfg: RankConfig) -> PairwiseLabelMatrix:
    """Ranking-statistics labels for every row pair of Z under cfg."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 1:
        raise ValueError(f"Z must be a non-empty 2-D array, got shape {Z.shape}")
    if not np.all(np.isfinite(Z)):
        raise ValueError("Z contains non-finite entries")
    if cfg.k > Z.shape[1]:
        raise ValueError(f"k={cfg.k} exceeds row dimension {Z.shape[1]}")
    ind = _top_k_indicator(Z, cfg.k)
    shared = ind @ ind.T  # shared[i, j] = |top_k(i) & top_k(j)|
    if cfg.mode == "soft":
        labels = shared / cfg.k
    else:
        labels = (shared >= cfg.k - 0.5).astype(np.float64)
    np.fill_diagonal(labels, 1.0)
    return PairwiseLabelMatrix(labels, np.ones(labels.shape, dtype=bool))


def cosine_labels(Z, mode: str, threshold: float = 0.9) -> PairwiseLabelMatrix:
    """Cosine-similarity labels: thresholded binary (hard) or the clamped score (soft)."""
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 1:
        raise ValueError(f"Z must be a non-empty 2-D array, got shape {Z.shape}")
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("cosine labels undefined for zero-norm rows")
    G = (Z / norms[:, None]) @ (Z / norms[:, None]).T
    if mode == "soft":
        labels = np.clip(G, 0.0, 1.0)
    else:
        labels = (G >= threshold).astype(np.float64)
    np.fill_diagonal(labels, 1.0)
    return PairwiseLabelMatrix(labels, np.ones(labels.shape, dtype=bool))


def mixed_pos_neg_labels(
    s_local: PairwiseLabelMatrix, s_global: PairwiseLabelMatrix
) -> PairwiseLabelMatrix:
    """Positives from the local matrix, negatives from the global one.

    Pairs the sources disagree on (local 0, global 1) are excluded via the
    mask rather than guessed.
    """
    a, b = s_local.labels, s_global.labels
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    for name, m in (("s_local", a), ("s_global", b)):
        if not np.all(np.isin(m, (0.0, 1.0))):
            raise ValueError(f"{name} must be a hard (binary) label matrix")
    labels = np.where(a == 1.0, 1.0, 0.0)
    mask = ~((a == 0.0) & (b == 1.0))
    np.fill_diagonal(labels, 1.0)
    np.fill_diagonal(mask, True)
    return PairwiseLabelMatrix(labels, mask)
