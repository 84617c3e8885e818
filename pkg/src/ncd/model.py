"""Two-branch network.

A small convolutional extractor (frozen after supervised pretraining) feeds
one or two branches. Each branch owns a projection stage producing a feature
map, a pooled embedding, and two linear softmax heads: one over the labeled
classes, one over the novel clusters (or over labeled + novel classes in
open-world mode).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

BRANCH_CONFIGS = {
    "global-only": ("global",),
    "local-only": ("local",),
    "global+global": ("global", "global"),
    "local+local": ("local", "local"),
    "global+local": ("global", "local"),
}


@dataclass
class ModelConfig:
    num_labeled: int
    num_novel: int
    in_channels: int = 3
    image_size: int = 32
    stem_channels: tuple = (32, 64, 64)
    embed_dim: int = 128
    branch_kinds: tuple = ("global", "local")
    open_world: bool = False

    def __post_init__(self):
        if self.num_labeled < 1 or self.num_novel < 1:
            raise ValueError("class counts must be positive")
        if len(self.stem_channels) != 3:
            raise ValueError("extractor uses exactly three stages")
        if not 1 <= len(self.branch_kinds) <= 2:
            raise ValueError("one or two branches supported")
        for kind in self.branch_kinds:
            if kind not in ("global", "local"):
                raise ValueError(f"unknown branch kind {kind!r}")

    @property
    def unlabeled_head_dim(self) -> int:
        if self.open_world:
            return self.num_labeled + self.num_novel
        return self.num_novel


class Extractor(nn.Module):
    """Three conv stages: 32x32 input -> stem_channels[-1] x 8 x 8 feature map."""

    def __init__(self, in_channels: int = 3, stem_channels: tuple = (32, 64, 64)):
        super().__init__()
        c1, c2, c3 = stem_channels
        self.stages = nn.Sequential(
            nn.Conv2d(in_channels, c1, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(c1, c2, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(c2, c3, 3, stride=1, padding=1),
            nn.ReLU(inplace=True),
        )
        self.out_channels = c3

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.stages(x)


class Branch(nn.Module):
    """Projection stage plus the two classification heads of one branch."""

    def __init__(self, in_channels: int, embed_dim: int, num_labeled: int, unlab_dim: int, kind: str):
        super().__init__()
        self.kind = kind
        self.project = nn.Sequential(
            nn.Conv2d(in_channels, embed_dim, 3, padding=1),
            nn.ReLU(inplace=True),
        )
        self.head_labeled = nn.Linear(embed_dim, num_labeled)
        self.head_unlabeled = nn.Linear(embed_dim, unlab_dim)


@dataclass
class BranchOutput:
    feature_map: torch.Tensor  # (B, d, h, w), pre-pooling
    embedding: torch.Tensor  # (B, d), spatial mean of the map
    labeled_probs: torch.Tensor  # (B, C_l), softmax
    unlabeled_probs: torch.Tensor  # (B, C_u) or (B, C_l + C_u), softmax


@dataclass
class ForwardOutput:
    branches: tuple

    def __getitem__(self, i: int) -> BranchOutput:
        return self.branches[i]

    def __len__(self) -> int:
        return len(self.branches)


class TwoBranchModel(nn.Module):
    """Frozen extractor + per-branch projections and softmax heads."""

    def __init__(self, config: ModelConfig, extractor: Extractor | None = None):
        super().__init__()
        self.config = config
        self.extractor = extractor or Extractor(config.in_channels, config.stem_channels)
        if self.extractor.out_channels != config.stem_channels[-1]:
            raise ValueError("extractor output channels disagree with config")
        self.branches = nn.ModuleList(
            Branch(
                self.extractor.out_channels,
                config.embed_dim,
                config.num_labeled,
                config.unlabeled_head_dim,
                kind,
            )
            for kind in config.branch_kinds
        )
        self.extractor_frozen = False
        self.training_started = False

    @property
    def branch_kinds(self) -> tuple:
        return self.config.branch_kinds

    @property
    def unlabeled_head_dim(self) -> int:
        return self.config.unlabeled_head_dim

    def freeze_extractor(self) -> "TwoBranchModel":
        for p in self.extractor.parameters():
            p.requires_grad_(False)
        self.extractor_frozen = True
        return self

    def unfreeze_extractor(self) -> "TwoBranchModel":
        for p in self.extractor.parameters():
            p.requires_grad_(True)
        self.extractor_frozen = False
        return self

    def extended_head_mode(self) -> "TwoBranchModel":
        """Rebuild the novel-class heads with labeled + novel outputs.

        Only legal before the first optimization step; raises afterwards.
        """
        if self.training_started:
            raise RuntimeError("extended head mode must be set before training starts")
        if self.config.open_world:
            return self
        self.config.open_world = True
        dim = self.config.unlabeled_head_dim
        for branch in self.branches:
            branch.head_unlabeled = nn.Linear(self.config.embed_dim, dim)
        return self

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def extract(self, x: torch.Tensor) -> torch.Tensor:
        """Extractor features for a raw image batch, gradient-free when frozen."""
        if x.ndim != 4 or x.shape[1] != self.config.in_channels or x.shape[2] != self.config.image_size or x.shape[3] != self.config.image_size:
            raise ValueError(
                f"expected (B, {self.config.in_channels}, {self.config.image_size},"
                f" {self.config.image_size}) input, got {tuple(x.shape)}"
            )
        if self.extractor_frozen:
            with torch.no_grad():
                return self.extractor(x)
        return self.extractor(x)

    def forward_features(self, feats: torch.Tensor) -> ForwardOutput:
        """Branch outputs from precomputed extractor features."""
        outs = []
        for branch in self.branches:
            fmap = branch.project(feats)
            z = fmap.mean(dim=(2, 3))
            outs.append(
                BranchOutput(
                    feature_map=fmap,
                    embedding=z,
                    labeled_probs=F.softmax(branch.head_labeled(z), dim=1),
                    unlabeled_probs=F.softmax(branch.head_unlabeled(z), dim=1),
                )
            )
        return ForwardOutput(branches=tuple(outs))

    def forward(self, x: torch.Tensor) -> ForwardOutput:
        return self.forward_features(self.extract(x))
