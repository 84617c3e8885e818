"""Training objective.

Components: pairwise binary cross-entropy driven by pseudo-labels, softmax
similarity distributions over feature banks, mutual distillation via the
symmetrized KL of those distributions, supervised cross-entropy on the
labeled heads, squared-error consistency between augmented views, and the
ramped sum of everything.

All functions take and return torch tensors so gradients flow wherever the
training graph needs them; pseudo-label matrices enter as constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .rankstats import PairwiseLabelMatrix

# inner products and probabilities are clamped away from {0, 1} before logs
EPS = 1e-7


@dataclass
class LossBreakdown:
    """Per-component values of one training step, all floats."""

    bce_g: float
    bce_p: float
    jsd: float
    ce: float
    mse: float
    ramp_weight: float
    total: float

    def as_dict(self) -> dict:
        return {
            "bce_g": self.bce_g,
            "bce_p": self.bce_p,
            "jsd": self.jsd,
            "ce": self.ce,
            "mse": self.mse,
            "ramp_weight": self.ramp_weight,
            "total": self.total,
        }


def pairwise_bce(label_matrix: PairwiseLabelMatrix, probs: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy over all M^2 pairs of head outputs.

    The agreement score of a pair is the inner product of the two probability
    vectors; masked pairs contribute zero but the normalizer stays M^2.
    """
    if probs.ndim != 2:
        raise ValueError(f"probs must be (M, C), got {tuple(probs.shape)}")
    if torch.isnan(probs).any():
        raise ValueError("probs contain NaN")
    m = probs.shape[0]
    if label_matrix.labels.shape != (m, m):
        raise ValueError(
            f"label matrix shape {label_matrix.labels.shape} does not match M={m}"
        )
    s = torch.as_tensor(label_matrix.labels, dtype=probs.dtype, device=probs.device)
    mask = torch.as_tensor(label_matrix.mask, dtype=probs.dtype, device=probs.device)
    inner = (probs @ probs.t()).clamp(EPS, 1.0 - EPS)
    terms = s * inner.log() + (1.0 - s) * (1.0 - inner).log()
    return -(mask * terms).sum() / (m * m)


def dual_bce(
    s_first: PairwiseLabelMatrix,
    probs_first: torch.Tensor,
    s_second: PairwiseLabelMatrix,
    probs_second: torch.Tensor,
) -> torch.Tensor:
    """Sum of the two branches' pairwise BCE terms."""
    return pairwise_bce(s_first, probs_first) + pairwise_bce(s_second, probs_second)


def sim_distribution(z: torch.Tensor, bank_rows, tau: float) -> torch.Tensor:
    """Softmax similarity distribution of embeddings against bank rows.

    Embeddings and rows are L2-normalized before the dot products; the
    softmax uses max-logit subtraction. Accepts (d,) or (B, d) embeddings and
    returns a distribution per embedding.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    rows = torch.as_tensor(bank_rows)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError("bank is empty")
    single = z.ndim == 1
    zb = z.unsqueeze(0) if single else z
    if zb.shape[1] != rows.shape[1]:
        raise ValueError(f"dim mismatch: z has {zb.shape[1]}, bank has {rows.shape[1]}")
    logits = F.normalize(zb, dim=1) @ F.normalize(rows.to(zb.dtype), dim=1).t() / tau
    p = F.softmax(logits, dim=1)
    return p[0] if single else p


def kl(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """KL divergence sum_i p_i log(p_i / q_i), natural log, 0 log 0 = 0.

    Computed in double precision regardless of input dtype; gradients still
    flow to tensor inputs.
    """
    p = torch.as_tensor(p).double()
    q = torch.as_tensor(q).double()
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"p and q must be equal-length vectors, got {p.shape} vs {q.shape}")
    if ((q == 0) & (p > 0)).any():
        raise ValueError("kl is infinite: q has a zero where p is positive")
    return (torch.xlogy(p, p) - torch.xlogy(p, q)).sum()


def jsd_sym(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """Symmetrized divergence (kl(p, q) + kl(q, p)) / 2."""
    return 0.5 * (kl(p, q) + kl(q, p))


def distill_loss(
    z_first: torch.Tensor,
    z_second: torch.Tensor,
    rows_first,
    rows_second,
    tau: float,
) -> torch.Tensor:
    """Mean symmetrized divergence between the branches' bank distributions.

    Row j of both banks must hold features of the same past image so that the
    distributions are comparable coordinate by coordinate. Gradients reach
    both embedding arguments; bank rows are constants.
    """
    pa = sim_distribution(z_first, rows_first, tau)
    pb = sim_distribution(z_second, rows_second, tau)
    if pa.ndim == 1:
        pa, pb = pa.unsqueeze(0), pb.unsqueeze(0)
    if pa.shape != pb.shape:
        raise ValueError(f"bank sizes differ: {pa.shape[1]} vs {pb.shape[1]}")
    la, lb = pa.log(), pb.log()
    per_image = 0.5 * ((pa * (la - lb)).sum(dim=1) + (pb * (lb - la)).sum(dim=1))
    return per_image.mean()


def cross_entropy_heads(targets: torch.Tensor, *head_probs: torch.Tensor) -> torch.Tensor:
    """Mean over samples of the summed negative log-likelihood of each head."""
    if len(head_probs) == 0:
        raise ValueError("at least one head required")
    targets = torch.as_tensor(targets, dtype=torch.long)
    total = None
    for probs in head_probs:
        if probs.ndim != 2 or probs.shape[0] != targets.shape[0]:
            raise ValueError(
                f"probs shape {tuple(probs.shape)} incompatible with {targets.shape[0]} targets"
            )
        if targets.min() < 0 or targets.max() >= probs.shape[1]:
            raise ValueError(
                f"target out of range [0, {probs.shape[1]}) : {int(targets.min())}..{int(targets.max())}"
            )
        picked = probs[torch.arange(targets.shape[0]), targets].clamp(EPS, 1.0)
        term = -picked.log().mean()
        total = term if total is None else total + term
    return total


def consistency_mse(
    labeled_pairs: list[tuple[torch.Tensor, torch.Tensor]],
    unlabeled_pairs: list[tuple[torch.Tensor, torch.Tensor]],
) -> torch.Tensor:
    """Squared difference of head outputs between the two views.

    Each pair is (probs, probs_of_augmented_view) for one head; labeled-head
    pairs are averaged over the labeled batch, unlabeled-head pairs over the
    unlabeled batch, and the per-head sums add up.
    """

    def group(pairs):
        acc = None
        for a, b in pairs:
            if a.shape != b.shape:
                raise ValueError(f"view outputs misaligned: {tuple(a.shape)} vs {tuple(b.shape)}")
            term = ((a - b) ** 2).sum(dim=1).mean()
            acc = term if acc is None else acc + term
        return acc

    lab = group(labeled_pairs)
    unlab = group(unlabeled_pairs)
    if lab is None and unlab is None:
        raise ValueError("no head pairs given")
    if lab is None:
        return unlab
    if unlab is None:
        return lab
    return lab + unlab


def ramp_up(t: float, r: float, lam: float) -> float:
    """Consistency weight lam * exp(-5 (1 - t/r)^2), t clamped to [0, r]."""
    if r <= 0:
        raise ValueError(f"ramp length must be positive, got {r}")
    if lam <= 0:
        raise ValueError(f"ramp scale must be positive, got {lam}")
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    frac = min(float(t), float(r)) / float(r)
    return lam * math.exp(-5.0 * (1.0 - frac) ** 2)


def _component(value, name: str) -> torch.Tensor:
    v = torch.as_tensor(value, dtype=torch.float64) if not torch.is_tensor(value) else value
    if torch.isnan(v).any():
        raise ValueError(f"loss component {name} is NaN")
    if not torch.isfinite(v).all():
        raise ValueError(f"loss component {name} is not finite")
    return value if torch.is_tensor(value) else v


def total_loss(
    bce_g,
    bce_p,
    jsd,
    ce,
    mse,
    t: float,
    ramp_length: float,
    ramp_scale: float,
) -> tuple[torch.Tensor, LossBreakdown]:
    """Ramped sum of all components, with the per-component breakdown.

    Disabled components enter as 0. Any NaN component aborts with its name.
    """
    parts = {
        "bce_g": _component(bce_g, "bce_g"),
        "bce_p": _component(bce_p, "bce_p"),
        "jsd": _component(jsd, "jsd"),
        "ce": _component(ce, "ce"),
        "mse": _component(mse, "mse"),
    }
    w = ramp_up(t, ramp_length, ramp_scale)
    total = parts["bce_g"] + parts["bce_p"] + parts["jsd"] + parts["ce"] + w * parts["mse"]

    def val(x):
        return float(x.item()) if torch.is_tensor(x) else float(x)

    breakdown = LossBreakdown(
        bce_g=val(parts["bce_g"]),
        bce_p=val(parts["bce_p"]),
        jsd=val(parts["jsd"]),
        ce=val(parts["ce"]),
        mse=val(parts["mse"]),
        ramp_weight=w,
        total=val(total),
    )
    return total, breakdown
