"""FIFO feature banks, part sampling, and dictionary similarity profiles.

Three banks are kept during training: a part dictionary fed one randomly
located feature column per image, and one feature bank per branch holding
pooled embeddings. All of them share the same fixed-capacity FIFO semantics:
enqueue a batch, evict the oldest rows once full.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F


class FifoBank:
    """Fixed-capacity first-in-first-out store of feature rows.

    Rows are stored detached (no gradient ever flows into a bank). Backed by
    a ring buffer; ``snapshot`` returns an immutable copy ordered oldest to
    newest.
    """

    def __init__(self, capacity: int, dim: int, dtype: torch.dtype = torch.float32):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self._buf = torch.zeros(self.capacity, self.dim, dtype=dtype)
        self._count = 0
        self._ptr = 0  # next write position

    @property
    def count(self) -> int:
        return self._count

    def __len__(self) -> int:
        return self._count

    def enqueue_batch(self, batch: torch.Tensor) -> "FifoBank":
        """Append a (b, dim) batch, evicting the oldest rows past capacity."""
        batch = torch.as_tensor(batch)
        if batch.ndim != 2 or batch.shape[1] != self.dim:
            raise ValueError(
                f"batch must have shape (b, {self.dim}), got {tuple(batch.shape)}"
            )
        b = batch.shape[0]
        if b > self.capacity:
            raise ValueError(f"batch of {b} rows exceeds capacity {self.capacity}")
        if b == 0:
            return self
        if not torch.isfinite(batch).all():
            raise ValueError("batch contains non-finite entries")
        batch = batch.detach().to(self._buf.dtype)
        end = self._ptr + b
        if end <= self.capacity:
            self._buf[self._ptr : end] = batch
        else:
            first = self.capacity - self._ptr
            self._buf[self._ptr :] = batch[:first]
            self._buf[: end - self.capacity] = batch[first:]
        self._ptr = end % self.capacity
        self._count = min(self._count + b, self.capacity)
        return self

    def snapshot(self) -> torch.Tensor:
        """Copy of the stored rows, oldest first."""
        if self._count < self.capacity:
            return self._buf[: self._count].clone()
        return torch.cat([self._buf[self._ptr :], self._buf[: self._ptr]]).clone()

    def load_rows(self, rows: torch.Tensor) -> None:
        """Reset contents to the given rows (oldest first); used by checkpoint restore."""
        rows = torch.as_tensor(rows, dtype=self._buf.dtype)
        if rows.ndim != 2 or rows.shape[1] != self.dim or rows.shape[0] > self.capacity:
            raise ValueError(f"rows of shape {tuple(rows.shape)} do not fit this bank")
        self._buf.zero_()
        self._buf[: rows.shape[0]] = rows
        self._count = rows.shape[0]
        self._ptr = rows.shape[0] % self.capacity


def sample_part(feature_map: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """One feature column of a (d, h, w) map at a uniformly drawn location."""
    if feature_map.ndim != 3:
        raise ValueError(f"feature map must be (d, h, w), got {tuple(feature_map.shape)}")
    d, h, w = feature_map.shape
    if h < 1 or w < 1 or d < 1:
        raise ValueError("feature map is empty")
    loc = int(rng.integers(h * w))
    return feature_map[:, loc // w, loc % w].detach().clone()


def sample_parts(feature_maps: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """One random-location column per map in a (B, d, h, w) stack -> (B, d)."""
    if feature_maps.ndim != 4:
        raise ValueError(f"expected (B, d, h, w), got {tuple(feature_maps.shape)}")
    B, d, h, w = feature_maps.shape
    if h < 1 or w < 1:
        raise ValueError("feature maps are empty")
    locs = rng.integers(h * w, size=B)
    flat = feature_maps.detach().reshape(B, d, h * w)
    return flat[torch.arange(B), :, torch.as_tensor(locs, dtype=torch.long)].clone()


def similarity_profiles(feature_maps: torch.Tensor, dictionary) -> torch.Tensor:
    """Per-image dictionary similarity profile, averaged over spatial locations.

    For each location the feature column is compared (cosine) against every
    dictionary row; the per-location similarity vectors are mean-pooled into
    one profile per image. Zero-norm columns or rows contribute zero
    similarity here; use ``similarity_profile`` for the strict variant.
    """
    rows = dictionary.snapshot() if isinstance(dictionary, FifoBank) else torch.as_tensor(dictionary)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError("dictionary is empty")
    if feature_maps.ndim != 4:
        raise ValueError(f"expected (B, d, h, w), got {tuple(feature_maps.shape)}")
    B, d, h, w = feature_maps.shape
    if d != rows.shape[1]:
        raise ValueError(f"feature dim {d} does not match dictionary dim {rows.shape[1]}")
    if h * w < 1:
        raise ValueError("feature maps are empty")
    q = feature_maps.detach().permute(0, 2, 3, 1).reshape(B * h * w, d)
    q = F.normalize(q.to(rows.dtype), dim=1)
    v = F.normalize(rows, dim=1)
    sims = q @ v.t()
    return sims.reshape(B, h * w, rows.shape[0]).mean(dim=1)


def similarity_profile(feature_map: torch.Tensor, dictionary) -> torch.Tensor:
    """Strict single-image profile: rejects zero-norm columns and rows."""
    rows = dictionary.snapshot() if isinstance(dictionary, FifoBank) else torch.as_tensor(dictionary)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError("dictionary is empty")
    if feature_map.ndim != 3:
        raise ValueError(f"feature map must be (d, h, w), got {tuple(feature_map.shape)}")
    d, h, w = feature_map.shape
    cols = feature_map.detach().reshape(d, h * w)
    if (cols.norm(dim=0) == 0).any():
        raise ValueError("feature map has a zero-norm column")
    if (rows.norm(dim=1) == 0).any():
        raise ValueError("dictionary has a zero-norm row")
    return similarity_profiles(feature_map.unsqueeze(0), rows)[0]
