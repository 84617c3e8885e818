"""Synthetic datasets, the on-disk container, class splits, and augmentation.

The generator encodes class identity twice: a weak global tint shared
between class pairs, and a strong set of small motifs pasted at random
positions. Clustering on pooled appearance therefore struggles while
part-aware features can separate classes, which is the regime the training
method is built for.

Container format ("NCDD1"): magic, version byte, u32 little-endian counts
N, C, H, W, raw float32 little-endian image payload, u32 labels, then a
length-prefixed UTF-8 JSON manifest naming the classes and the split.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .seeds import stream_rng

MAGIC = b"NCDD1"
VERSION = 1


class DatasetFormatError(ValueError):
    """Malformed dataset file; message carries the byte offset."""


@dataclass
class SynthConfig:
    num_classes: int = 10
    images_per_class: int = 100
    image_size: int = 32
    motif_pool: int = 30
    motifs_per_class: int = 3
    motif_size: int = 4
    motifs_per_image: int = 3
    noise_sigma: float = 0.06
    tint_strength: float = 0.12
    brightness_jitter: float = 0.22
    motif_contrast: float = 0.5
    seed: int = 0

    def __post_init__(self):
        errors = []
        for name in ("num_classes", "images_per_class", "image_size", "motif_pool",
                     "motifs_per_class", "motif_size", "motifs_per_image"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be positive")
        if self.motifs_per_class > self.motif_pool:
            errors.append("motifs_per_class exceeds motif_pool")
        if self.motif_size > self.image_size:
            errors.append("motif does not fit in the image")
        for name in ("noise_sigma", "tint_strength", "brightness_jitter", "motif_contrast"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be nonnegative")
        if errors:
            raise ValueError("; ".join(errors))


@dataclass
class DatasetBundle:
    images: np.ndarray  # (N, 3, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64 class ids
    class_names: list
    labeled_classes: tuple
    unlabeled_classes: tuple

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        lab, unlab = set(self.labeled_classes), set(self.unlabeled_classes)
        if lab & unlab:
            raise ValueError(f"labeled and unlabeled class sets overlap: {sorted(lab & unlab)}")
        present = set(int(c) for c in np.unique(self.labels))
        if not present <= (lab | unlab):
            raise ValueError("some image classes appear in neither split")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


@dataclass
class LabeledSplit:
    """Images of the labeled classes with targets remapped to 0..C_l-1."""

    images: np.ndarray
    labels: np.ndarray
    class_ids: tuple  # original bundle class id per target index


@dataclass
class UnlabeledSplit:
    """Images of the discovery classes. Targets stay hidden from training;
    the evaluation module reads them via ``hidden_labels``."""

    images: np.ndarray
    class_ids: tuple
    _labels: np.ndarray = field(repr=False)

    @property
    def hidden_labels(self) -> np.ndarray:
        return self._labels


@dataclass
class OpenWorldSplit:
    """Discovery pool mixing seen-class and novel-class images.

    ``hidden_targets`` holds labeled-class indices for seen instances and
    novel-class indices for novel ones; only evaluation may look at them.
    """

    images: np.ndarray
    seen_class_ids: tuple
    novel_class_ids: tuple
    _targets: np.ndarray = field(repr=False)
    _seen_mask: np.ndarray = field(repr=False)

    @property
    def hidden_targets(self) -> np.ndarray:
        return self._targets

    @property
    def hidden_seen_mask(self) -> np.ndarray:
        return self._seen_mask


def synth_generate(cfg: SynthConfig) -> DatasetBundle:
    """Deterministic motif dataset for the given config."""
    rng = stream_rng(cfg.seed, "synth")
    c, n_per, hw, m = cfg.num_classes, cfg.images_per_class, cfg.image_size, cfg.motif_size

    motifs = rng.uniform(-1.0, 1.0, size=(cfg.motif_pool, 3, m, m)).astype(np.float32)
    # classes draw disjoint motif subsets while the pool lasts, then reuse
    pool_order = rng.permutation(cfg.motif_pool)
    class_motifs = []
    for ci in range(c):
        start = ci * cfg.motifs_per_class
        if start + cfg.motifs_per_class <= cfg.motif_pool:
            picks = pool_order[start : start + cfg.motifs_per_class]
        else:
            picks = rng.choice(cfg.motif_pool, size=cfg.motifs_per_class, replace=False)
        class_motifs.append(np.sort(picks))

    # weak global cue: class pairs share a tint
    palette = rng.uniform(-1.0, 1.0, size=((c + 1) // 2, 3)).astype(np.float32)
    tints = np.stack([palette[ci // 2] for ci in range(c)]) * cfg.tint_strength

    n = c * n_per
    images = np.empty((n, 3, hw, hw), dtype=np.float32)
    labels = np.repeat(np.arange(c, dtype=np.int64), n_per)
    span = hw - m + 1
    for idx in range(n):
        ci = int(labels[idx])
        img = np.full((3, hw, hw), 0.5, dtype=np.float32)
        img += tints[ci][:, None, None]
        img += rng.uniform(-cfg.brightness_jitter, cfg.brightness_jitter)
        img += rng.normal(0.0, cfg.noise_sigma, size=(3, hw, hw)).astype(np.float32)
        replace_draw = cfg.motifs_per_image > cfg.motifs_per_class
        chosen = rng.choice(class_motifs[ci], size=cfg.motifs_per_image, replace=replace_draw)
        for mi in chosen:
            r, col = rng.integers(span), rng.integers(span)
            img[:, r : r + m, col : col + m] += motifs[mi] * cfg.motif_contrast
        images[idx] = np.clip(img, 0.0, 1.0)

    names = [f"class_{ci:02d}" for ci in range(c)]
    half = (c + 1) // 2
    return DatasetBundle(
        images=images,
        labels=labels,
        class_names=names,
        labeled_classes=tuple(range(half)),
        unlabeled_classes=tuple(range(half, c)),
    )


def split_classes(bundle: DatasetBundle, labeled_class_ids) -> tuple[LabeledSplit, UnlabeledSplit]:
    """Partition the bundle by class: labeled keep targets, the rest hide them."""
    labeled_ids = tuple(sorted(int(i) for i in labeled_class_ids))
    all_ids = set(range(bundle.num_classes))
    unknown = set(labeled_ids) - all_ids
    if unknown:
        raise ValueError(f"unknown class ids: {sorted(unknown)}")
    unlabeled_ids = tuple(sorted(all_ids - set(labeled_ids)))
    if not unlabeled_ids:
        raise ValueError("every class is labeled; nothing left to discover")

    lab_remap = {cid: i for i, cid in enumerate(labeled_ids)}
    unlab_remap = {cid: i for i, cid in enumerate(unlabeled_ids)}
    lab_mask = np.isin(bundle.labels, labeled_ids)
    lab_targets = np.array([lab_remap[int(v)] for v in bundle.labels[lab_mask]], dtype=np.int64)
    unlab_targets = np.array(
        [unlab_remap[int(v)] for v in bundle.labels[~lab_mask]], dtype=np.int64
    )
    return (
        LabeledSplit(images=bundle.images[lab_mask], labels=lab_targets, class_ids=labeled_ids),
        UnlabeledSplit(
            images=bundle.images[~lab_mask], class_ids=unlabeled_ids, _labels=unlab_targets
        ),
    )


def split_open_world(
    bundle: DatasetBundle,
    labeled_class_ids,
    seen_unlabeled_fraction: float = 0.5,
    seed: int = 0,
) -> tuple[LabeledSplit, OpenWorldSplit]:
    """Open-world partition: part of each seen class joins the discovery pool.

    Per seen class, a seeded fraction of its images is moved (without labels)
    into the discovery pool next to every novel-class image.
    """
    if not 0.0 < seen_unlabeled_fraction < 1.0:
        raise ValueError("seen_unlabeled_fraction must be in (0, 1)")
    labeled_ids = tuple(sorted(int(i) for i in labeled_class_ids))
    base_lab, base_unlab = split_classes(bundle, labeled_ids)
    rng = stream_rng(seed, "open-world-split")

    keep_mask = np.ones(len(base_lab.images), dtype=bool)
    for cls_idx in range(len(labeled_ids)):
        idxs = np.flatnonzero(base_lab.labels == cls_idx)
        moved = rng.permutation(idxs)[: int(round(len(idxs) * seen_unlabeled_fraction))]
        keep_mask[moved] = False

    moved_mask = ~keep_mask
    pool_images = np.concatenate([base_lab.images[moved_mask], base_unlab.images])
    pool_targets = np.concatenate([base_lab.labels[moved_mask], base_unlab.hidden_labels])
    pool_seen = np.concatenate(
        [np.ones(int(moved_mask.sum()), dtype=bool), np.zeros(len(base_unlab.images), dtype=bool)]
    )
    order = rng.permutation(len(pool_images))
    labeled = LabeledSplit(
        images=base_lab.images[keep_mask],
        labels=base_lab.labels[keep_mask],
        class_ids=labeled_ids,
    )
    pool = OpenWorldSplit(
        images=pool_images[order],
        seen_class_ids=labeled_ids,
        novel_class_ids=base_unlab.class_ids,
        _targets=pool_targets[order],
        _seen_mask=pool_seen[order],
    )
    return labeled, pool


def save_dataset(bundle: DatasetBundle, path) -> None:
    manifest = json.dumps(
        {
            "class_names": bundle.class_names,
            "labeled_classes": list(bundle.labeled_classes),
            "unlabeled_classes": list(bundle.unlabeled_classes),
        }
    ).encode("utf-8")
    n, _, h, w = bundle.images.shape
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<B", VERSION)
    payload += struct.pack("<4I", n, bundle.num_classes, h, w)
    payload += np.ascontiguousarray(bundle.images, dtype="<f4").tobytes()
    payload += np.ascontiguousarray(bundle.labels, dtype="<u4").tobytes()
    payload += struct.pack("<I", len(manifest))
    payload += manifest
    with open(path, "wb") as fh:
        fh.write(bytes(payload))


def load_dataset(path) -> DatasetBundle:
    with open(path, "rb") as fh:
        raw = fh.read()

    def need(offset, count, what):
        if offset + count > len(raw):
            raise DatasetFormatError(f"truncated {what} at offset {offset}")
        return raw[offset : offset + count]

    if need(0, 5, "magic") != MAGIC:
        raise DatasetFormatError(f"bad magic at offset 0: expected {MAGIC!r}")
    version = need(5, 1, "version")[0]
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version} at offset 5")
    n, c, h, w = struct.unpack("<4I", need(6, 16, "header"))
    off = 22
    img_bytes = n * 3 * h * w * 4
    images = np.frombuffer(need(off, img_bytes, "image payload"), dtype="<f4").reshape(n, 3, h, w)
    off += img_bytes
    labels = np.frombuffer(need(off, n * 4, "label payload"), dtype="<u4").astype(np.int64)
    off += n * 4
    (mlen,) = struct.unpack("<I", need(off, 4, "manifest length"))
    off += 4
    manifest = json.loads(need(off, mlen, "manifest").decode("utf-8"))
    off += mlen
    if off != len(raw):
        raise DatasetFormatError(f"trailing {len(raw) - off} bytes at offset {off}")
    if len(manifest["class_names"]) != c:
        raise DatasetFormatError(f"manifest names {len(manifest['class_names'])} != header C={c}")
    return DatasetBundle(
        images=images.copy(),
        labels=labels,
        class_names=list(manifest["class_names"]),
        labeled_classes=tuple(manifest["labeled_classes"]),
        unlabeled_classes=tuple(manifest["unlabeled_classes"]),
    )


@dataclass(frozen=True)
class AugmentPolicy:
    flip: bool = True
    max_shift: int = 4
    noise_sigma: float = 0.02

    @classmethod
    def identity(cls) -> "AugmentPolicy":
        return cls(flip=False, max_shift=0, noise_sigma=0.0)


def horizontal_flip(x: np.ndarray) -> np.ndarray:
    return x[..., ::-1].copy()


def translate(x: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Shift by (dy, dx) with zero fill."""
    out = np.zeros_like(x)
    h, w = x.shape[-2:]
    ys = slice(max(dy, 0), min(h + dy, h))
    xs = slice(max(dx, 0), min(w + dx, w))
    ys_src = slice(max(-dy, 0), min(h - dy, h))
    xs_src = slice(max(-dx, 0), min(w - dx, w))
    out[..., ys, xs] = x[..., ys_src, xs_src]
    return out


def augment(x: np.ndarray, rng: np.random.Generator, policy: AugmentPolicy) -> np.ndarray:
    """Randomly transformed view: flip, small translation, pixel noise."""
    out = np.asarray(x, dtype=np.float32)
    if policy.flip and rng.random() < 0.5:
        out = horizontal_flip(out)
    if policy.max_shift > 0:
        dy = int(rng.integers(-policy.max_shift, policy.max_shift + 1))
        dx = int(rng.integers(-policy.max_shift, policy.max_shift + 1))
        if dy or dx:
            out = translate(out, dy, dx)
    if policy.noise_sigma > 0:
        out = out + rng.normal(0.0, policy.noise_sigma, size=out.shape).astype(np.float32)
    return np.clip(out, 0.0, 1.0)


def augment_batch(batch: np.ndarray, rng: np.random.Generator, policy: AugmentPolicy) -> np.ndarray:
    return np.stack([augment(img, rng, policy) for img in batch])
