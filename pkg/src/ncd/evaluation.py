"""Cluster inference and Hungarian-matched accuracy.

Predictions come from the first branch's novel-class head (the branch order
puts the global branch first in the canonical configuration); banks and
pseudo-labels play no role at inference time. Accuracy is the fraction of
images whose predicted cluster maps to their hidden class under the optimal
cluster-to-class permutation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans


@dataclass
class AssignmentResult:
    assignments: np.ndarray  # per-image cluster index
    source: str  # "global-head" | "local-head" | "kmeans"


@dataclass
class AccReport:
    acc: float
    permutation: np.ndarray  # permutation[pred_cluster] = matched class
    confusion: np.ndarray  # confusion[pred_cluster, true_class] counts


def _forward_probs(model, images, batch_size: int = 256) -> np.ndarray:
    """Novel-head probabilities of the first branch for a stack of images."""
    was_training = model.training
    model.eval()
    outs = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            x = torch.as_tensor(images[start : start + batch_size], dtype=torch.float32)
            outs.append(model(x)[0].unlabeled_probs.numpy())
    if was_training:
        model.train()
    return np.concatenate(outs, axis=0)


def predict_clusters(model, images, batch_size: int = 256) -> AssignmentResult:
    """Argmax cluster per image; ties go to the lowest index.

    In open-world mode the novel clusters occupy the trailing coordinates of
    the extended head, so the argmax is restricted to them.
    """
    probs = _forward_probs(model, images, batch_size)
    if model.config.open_world:
        probs = probs[:, model.config.num_labeled :]
    return AssignmentResult(assignments=np.argmax(probs, axis=1), source="global-head")


def hungarian_match(confusion: np.ndarray) -> np.ndarray:
    """Bijection over cluster indices maximizing the matched sum. Exact."""
    confusion = np.asarray(confusion)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
        raise ValueError(f"confusion must be square, got shape {confusion.shape}")
    if (confusion < 0).any():
        raise ValueError("confusion counts must be nonnegative")
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    perm = np.empty(confusion.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm


def clustering_acc(assignments, ground_truth, num_clusters: int | None = None) -> AccReport:
    """Accuracy under the optimal cluster-to-class permutation."""
    assignments = np.asarray(assignments, dtype=np.int64)
    ground_truth = np.asarray(ground_truth, dtype=np.int64)
    if assignments.shape != ground_truth.shape or assignments.ndim != 1:
        raise ValueError(
            f"assignments and ground truth must be equal-length vectors,"
            f" got {assignments.shape} vs {ground_truth.shape}"
        )
    if assignments.size == 0:
        raise ValueError("no samples to evaluate")
    if assignments.min() < 0 or ground_truth.min() < 0:
        raise ValueError("indices must be nonnegative")
    c = int(max(assignments.max(), ground_truth.max())) + 1
    if num_clusters is not None:
        if num_clusters < c:
            raise ValueError(f"num_clusters={num_clusters} below observed max index {c - 1}")
        c = num_clusters
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (assignments, ground_truth), 1)
    perm = hungarian_match(confusion)
    matched = confusion[np.arange(c), perm].sum()
    return AccReport(acc=matched / assignments.size, permutation=perm, confusion=confusion)


def open_world_eval(model, images, hidden_targets, seen_mask) -> dict:
    """Seen-class accuracy and novel-class clustering accuracy.

    ``hidden_targets`` holds, per image, the labeled-class index for seen
    instances and the novel-class index for novel instances; ``seen_mask``
    says which is which.
    """
    if not model.config.open_world:
        raise RuntimeError("open-world evaluation requires an open-world model")
    hidden_targets = np.asarray(hidden_targets, dtype=np.int64)
    seen_mask = np.asarray(seen_mask, dtype=bool)
    if hidden_targets.shape != seen_mask.shape or len(hidden_targets) != len(images):
        raise ValueError("targets, mask and images must align")
    probs = _forward_probs(model, images)
    c_l = model.config.num_labeled
    seen_pred = np.argmax(probs[seen_mask][:, :c_l], axis=1)
    novel_pred = np.argmax(probs[~seen_mask][:, c_l:], axis=1)
    seen_acc = float(np.mean(seen_pred == hidden_targets[seen_mask])) if seen_mask.any() else float("nan")
    if (~seen_mask).any():
        novel_acc = clustering_acc(novel_pred, hidden_targets[~seen_mask]).acc
    else:
        novel_acc = float("nan")
    return {"seen_acc": seen_acc, "novel_acc": novel_acc}


def kmeans_baseline(features, num_clusters: int, seed: int) -> AssignmentResult:
    """Seeded k-means (k-means++ init, 10 restarts, best inertia kept)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"features must be (N, d), got shape {features.shape}")
    if features.shape[0] < num_clusters:
        raise ValueError(
            f"need at least {num_clusters} samples for {num_clusters} clusters,"
            f" got {features.shape[0]}"
        )
    km = KMeans(
        n_clusters=num_clusters,
        init="k-means++",
        n_init=10,
        random_state=seed % (2**32),
        algorithm="lloyd",
    ).fit(features)
    return AssignmentResult(assignments=km.labels_.astype(np.int64), source="kmeans")


def extract_embeddings(model, images, batch_size: int = 256) -> tuple[np.ndarray, ...]:
    """Pooled embeddings of every branch for a stack of images."""
    was_training = model.training
    model.eval()
    per_branch = [[] for _ in model.branches]
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            x = torch.as_tensor(images[start : start + batch_size], dtype=torch.float32)
            out = model(x)
            for i in range(len(model.branches)):
                per_branch[i].append(out[i].embedding.numpy())
    if was_training:
        model.train()
    return tuple(np.concatenate(chunks, axis=0) for chunks in per_branch)
