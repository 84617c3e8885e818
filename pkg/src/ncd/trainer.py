"""Discovery-phase training.

The loop pairs a labeled batch with each unlabeled batch, generates the
per-branch pseudo-labels from the primary (un-augmented) view, assembles all
enabled losses against the banks' pre-step contents, applies one SGD step,
and only then enqueues the batch's detached features. The extractor stays
frozen throughout; it is produced by a supervised pretraining pass over the
labeled split.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field, fields, replace

import numpy as np
import torch
import torch.nn.functional as F

from . import configio, dataio, evaluation, losses, membank, rankstats
from .model import BRANCH_CONFIGS, Extractor, ModelConfig, TwoBranchModel
from .seeds import stream_rng, stream_seed

CKPT_MAGIC = b"NCDCKPT1"

LABEL_MODES = ("rs-soft", "rs-hard", "cosine-soft", "cosine-hard", "mixed-local-pos-global-neg")

METRIC_COLUMNS = (
    "kind",
    "step",
    "epoch",
    "bce_g",
    "bce_p",
    "jsd",
    "ce",
    "mse",
    "ramp_weight",
    "total",
    "acc",
)


class CheckpointFormatError(ValueError):
    """Malformed checkpoint file; message carries the byte offset."""


@dataclass
class TrainConfig:
    # pseudo-labels
    k_global: int = 5
    k_local: int = 30
    label_mode: str = "rs-soft"
    cosine_threshold: float = 0.9
    # banks and distillation
    temperature: float = 0.07
    dict_capacity: int = 2048
    local_bank_capacity: int = 2048
    global_bank_capacity: int = 2048
    # optimization
    labeled_batch: int = 128
    unlabeled_batch: int = 64
    epochs: int = 200
    lr: float = 0.1
    lr_decay_factor: float = 10.0
    lr_decay_epochs: tuple = (170,)
    momentum: float = 0.9
    ramp_scale: float = 50.0
    ramp_length: float = 150.0
    ramp_per_step: bool = False
    seed: int = 0
    # ablation switches
    use_bce: bool = True
    use_jsd: bool = True
    use_ce: bool = True
    use_mse: bool = True
    branch_config: str = "global+local"
    open_world: bool = False
    # model
    embed_dim: int = 128
    stem_channels: tuple = (32, 64, 64)
    image_size: int = 32
    in_channels: int = 3
    # pretraining substitute for the frozen extractor
    pretrain_epochs: int = 30
    pretrain_lr: float = 0.05
    # local branch waits until the dictionary can support its top-k
    local_warmup: bool = True
    # augmentation policy for the consistency views
    aug_flip: bool = True
    aug_max_shift: int = 4
    aug_noise_sigma: float = 0.02

    def __post_init__(self):
        errors = []
        positive = (
            "k_global", "k_local", "temperature", "dict_capacity", "local_bank_capacity",
            "global_bank_capacity", "labeled_batch", "unlabeled_batch", "epochs", "lr",
            "lr_decay_factor", "ramp_scale", "ramp_length", "embed_dim", "image_size",
            "in_channels", "pretrain_epochs", "pretrain_lr",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                errors.append(f"{name} must be positive")
        for name in ("momentum", "cosine_threshold", "aug_noise_sigma"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be nonnegative")
        if self.aug_max_shift < 0:
            errors.append("aug_max_shift must be nonnegative")
        if self.label_mode not in LABEL_MODES:
            errors.append(f"label_mode must be one of {LABEL_MODES}")
        if self.branch_config not in BRANCH_CONFIGS:
            errors.append(f"branch_config must be one of {tuple(BRANCH_CONFIGS)}")
        if self.k_local > self.dict_capacity:
            errors.append("k_local exceeds dict_capacity")
        if self.label_mode == "mixed-local-pos-global-neg" and self.branch_config != "global+local":
            errors.append("mixed label mode needs both a global and a local branch")
        if errors:
            raise ValueError("; ".join(sorted(errors)))

    @property
    def branch_kinds(self) -> tuple:
        return BRANCH_CONFIGS[self.branch_config]

    def augment_policy(self) -> dataio.AugmentPolicy:
        return dataio.AugmentPolicy(
            flip=self.aug_flip, max_shift=self.aug_max_shift, noise_sigma=self.aug_noise_sigma
        )


@dataclass
class PretrainResult:
    extractor: Extractor
    labeled_accuracy: float


@dataclass
class BranchBanks:
    feature_bank: membank.FifoBank
    part_dict: membank.FifoBank | None  # only for local-kind branches


@dataclass
class TrainState:
    config: TrainConfig
    model: TwoBranchModel
    optimizer: torch.optim.SGD
    banks: list
    labeled: dataio.LabeledSplit
    unlabeled_images: np.ndarray
    lab_feats: torch.Tensor
    unlab_feats: torch.Tensor
    rng_augment: np.random.Generator
    rng_parts: np.random.Generator
    rng_batches: np.random.Generator
    epoch: int = 1
    step: int = 0


@dataclass
class TrainResult:
    model: TwoBranchModel
    banks: list
    metrics: list
    acc_history: list
    config: TrainConfig
    checkpoint_path: str | None = None
    metrics_path: str | None = None


def pretrain_extractor(labeled: dataio.LabeledSplit, config: TrainConfig) -> PretrainResult:
    """Supervised pretraining of the extractor on the labeled split.

    A temporary linear head on the pooled features is trained with
    cross-entropy and discarded; the extractor comes back frozen.
    """
    if len(labeled.images) == 0:
        raise ValueError("labeled split is empty")
    torch.manual_seed(stream_seed(config.seed, "pretrain-init"))
    extractor = Extractor(config.in_channels, config.stem_channels)
    head = torch.nn.Linear(extractor.out_channels, len(labeled.class_ids))
    params = list(extractor.parameters()) + list(head.parameters())
    opt = torch.optim.SGD(params, lr=config.pretrain_lr, momentum=config.momentum)
    rng = stream_rng(config.seed, "pretrain-batches")
    images = torch.as_tensor(labeled.images)
    targets = torch.as_tensor(labeled.labels)
    n = len(labeled.images)
    for _ in range(config.pretrain_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.labeled_batch):
            idx = order[start : start + config.labeled_batch]
            feats = extractor(images[idx])
            logits = head(feats.mean(dim=(2, 3)))
            loss = F.cross_entropy(logits, targets[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
    with torch.no_grad():
        correct = 0
        for start in range(0, n, 512):
            logits = head(extractor(images[start : start + 512]).mean(dim=(2, 3)))
            correct += int((logits.argmax(dim=1) == targets[start : start + 512]).sum())
    for p in extractor.parameters():
        p.requires_grad_(False)
    return PretrainResult(extractor=extractor, labeled_accuracy=correct / n)


def _cache_features(model: TwoBranchModel, images: np.ndarray, batch: int = 512) -> torch.Tensor:
    chunks = []
    with torch.no_grad():
        for start in range(0, len(images), batch):
            chunks.append(model.extractor(torch.as_tensor(images[start : start + batch])))
    return torch.cat(chunks) if chunks else torch.zeros(0)


def make_state(
    config: TrainConfig,
    labeled: dataio.LabeledSplit,
    unlabeled,
    extractor: Extractor,
) -> TrainState:
    """Model, optimizer, banks, and cached frozen features for a fresh run."""
    num_labeled = len(labeled.class_ids)
    if config.open_world:
        if not isinstance(unlabeled, dataio.OpenWorldSplit):
            raise ValueError("open-world training needs an OpenWorldSplit discovery pool")
        num_novel = len(unlabeled.novel_class_ids)
    else:
        num_novel = len(unlabeled.class_ids)
    torch.manual_seed(stream_seed(config.seed, "model-init"))
    model_cfg = ModelConfig(
        num_labeled=num_labeled,
        num_novel=num_novel,
        in_channels=config.in_channels,
        image_size=config.image_size,
        stem_channels=tuple(config.stem_channels),
        embed_dim=config.embed_dim,
        branch_kinds=config.branch_kinds,
        open_world=config.open_world,
    )
    model = TwoBranchModel(model_cfg, extractor=extractor).freeze_extractor()
    optimizer = torch.optim.SGD(model.trainable_parameters(), lr=config.lr, momentum=config.momentum)
    banks = []
    for kind in config.branch_kinds:
        cap = config.global_bank_capacity if kind == "global" else config.local_bank_capacity
        feature_bank = membank.FifoBank(cap, config.embed_dim)
        part_dict = membank.FifoBank(config.dict_capacity, config.embed_dim) if kind == "local" else None
        banks.append(BranchBanks(feature_bank=feature_bank, part_dict=part_dict))
    return TrainState(
        config=config,
        model=model,
        optimizer=optimizer,
        banks=banks,
        labeled=labeled,
        unlabeled_images=np.asarray(unlabeled.images),
        lab_feats=_cache_features(model, labeled.images),
        unlab_feats=_cache_features(model, unlabeled.images),
        rng_augment=stream_rng(config.seed, "augment"),
        rng_parts=stream_rng(config.seed, "parts"),
        rng_batches=stream_rng(config.seed, "batches"),
    )


def _branch_label_matrices(state: TrainState, out_unlab) -> list:
    """Per-branch pseudo-label matrices from the primary view, or None when gated."""
    cfg = state.config
    kinds = cfg.branch_kinds
    bases = []
    for i, kind in enumerate(kinds):
        if kind == "global":
            bases.append(out_unlab[i].embedding.detach().numpy())
        else:
            part_dict = state.banks[i].part_dict
            need = cfg.k_local if cfg.label_mode.startswith("rs") else 1
            if cfg.label_mode == "mixed-local-pos-global-neg":
                need = cfg.k_local
            if part_dict.count < need:
                if not cfg.local_warmup:
                    raise ValueError(
                        f"part dictionary holds {part_dict.count} rows, need {need};"
                        " enable local_warmup or enqueue more steps"
                    )
                bases.append(None)  # warm-up: this branch's labels unavailable
                continue
            profiles = membank.similarity_profiles(
                out_unlab[i].feature_map.detach(), part_dict.snapshot()
            )
            bases.append(profiles.numpy())

    if cfg.label_mode == "mixed-local-pos-global-neg":
        g_idx = kinds.index("global")
        p_idx = kinds.index("local")
        if bases[p_idx] is None:
            return [None for _ in kinds]
        s_global = rankstats.pairwise_label_matrix(
            bases[g_idx], rankstats.RankConfig(cfg.k_global, "hard")
        )
        s_local = rankstats.pairwise_label_matrix(
            bases[p_idx], rankstats.RankConfig(cfg.k_local, "hard")
        )
        mixed = rankstats.mixed_pos_neg_labels(s_local, s_global)
        return [mixed for _ in kinds]

    matrices = []
    for kind, base in zip(kinds, bases):
        if base is None:
            matrices.append(None)
            continue
        if cfg.label_mode in ("rs-soft", "rs-hard"):
            k = cfg.k_global if kind == "global" else cfg.k_local
            mode = cfg.label_mode.split("-")[1]
            matrices.append(rankstats.pairwise_label_matrix(base, rankstats.RankConfig(k, mode)))
        else:
            mode = cfg.label_mode.split("-")[1]
            matrices.append(rankstats.cosine_labels(base, mode, cfg.cosine_threshold))
    return matrices


def compute_losses(
    cfg: TrainConfig,
    out_lab,
    out_unlab,
    out_aug_lab,
    out_aug_unlab,
    targets: torch.Tensor,
    label_matrices,
    bank_rows,
    t: float,
):
    """Assemble every enabled loss term; pseudo-labels and bank rows enter as constants.

    ``label_matrices`` aligns with the branches (None disables that branch's
    BCE); ``bank_rows`` is a pair of feature-bank snapshots or None.
    """
    two = len(out_unlab.branches) == 2
    bce_terms = [0.0, 0.0]
    if cfg.use_bce and label_matrices is not None:
        for i, matrix in enumerate(label_matrices):
            if matrix is not None:
                bce_terms[i] = losses.pairwise_bce(matrix, out_unlab[i].unlabeled_probs)
    jsd = 0.0
    if cfg.use_jsd and two and bank_rows is not None:
        jsd = losses.distill_loss(
            out_unlab[0].embedding,
            out_unlab[1].embedding,
            bank_rows[0],
            bank_rows[1],
            cfg.temperature,
        )
    ce = 0.0
    if cfg.use_ce:
        ce = losses.cross_entropy_heads(targets, *[o.labeled_probs for o in out_lab.branches])
        if cfg.open_world:
            # extended heads also learn the seen classes from labeled data
            ce = ce + losses.cross_entropy_heads(
                targets, *[o.unlabeled_probs for o in out_lab.branches]
            )
    mse = 0.0
    if cfg.use_mse and out_aug_lab is not None:
        lab_pairs = [
            (a.labeled_probs, b.labeled_probs)
            for a, b in zip(out_lab.branches, out_aug_lab.branches)
        ]
        unlab_pairs = [
            (a.unlabeled_probs, b.unlabeled_probs)
            for a, b in zip(out_unlab.branches, out_aug_unlab.branches)
        ]
        mse = losses.consistency_mse(lab_pairs, unlab_pairs)
    return losses.total_loss(
        bce_terms[0], bce_terms[1], jsd, ce, mse,
        t=t, ramp_length=cfg.ramp_length, ramp_scale=cfg.ramp_scale,
    )


def _step(state: TrainState, lab_idx: np.ndarray, unlab_idx: np.ndarray) -> losses.LossBreakdown:
    cfg = state.config
    model = state.model
    policy = cfg.augment_policy()

    # (1) forward the primary views from the cached frozen features
    out_lab = model.forward_features(state.lab_feats[lab_idx])
    out_unlab = model.forward_features(state.unlab_feats[unlab_idx])
    out_aug_lab = out_aug_unlab = None
    if cfg.use_mse:
        aug_lab = dataio.augment_batch(state.labeled.images[lab_idx], state.rng_augment, policy)
        aug_unlab = dataio.augment_batch(
            state.unlabeled_images[unlab_idx], state.rng_augment, policy
        )
        out_aug_lab = model.forward_features(model.extract(torch.as_tensor(aug_lab)))
        out_aug_unlab = model.forward_features(model.extract(torch.as_tensor(aug_unlab)))

    # (2) pseudo-labels and bank snapshots against pre-step contents
    label_matrices = _branch_label_matrices(state, out_unlab) if cfg.use_bce else None
    bank_rows = None
    if cfg.use_jsd and len(model.branches) == 2:
        first, second = state.banks[0].feature_bank, state.banks[1].feature_bank
        if first.count > 0 and second.count > 0:
            bank_rows = (first.snapshot(), second.snapshot())

    # (3) losses and one optimizer step
    t = float(state.step) if cfg.ramp_per_step else float(state.epoch - 1)
    targets = torch.as_tensor(state.labeled.labels[lab_idx])
    total, breakdown = compute_losses(
        cfg, out_lab, out_unlab, out_aug_lab, out_aug_unlab,
        targets, label_matrices, bank_rows, t,
    )
    if torch.is_tensor(total):
        state.optimizer.zero_grad(set_to_none=True)
        total.backward()
        state.optimizer.step()
    model.training_started = True

    # (4) enqueue this batch's detached features
    with torch.no_grad():
        for i, banks in enumerate(state.banks):
            emb = torch.cat([out_lab[i].embedding, out_unlab[i].embedding]).detach()
            banks.feature_bank.enqueue_batch(emb)
            if banks.part_dict is not None:
                maps = torch.cat([out_lab[i].feature_map, out_unlab[i].feature_map]).detach()
                banks.part_dict.enqueue_batch(membank.sample_parts(maps, state.rng_parts))
    state.step += 1
    return breakdown


def train_step(state: TrainState, lab_idx, unlab_idx) -> losses.LossBreakdown:
    """One standard discovery step over the given split indices."""
    if state.config.open_world:
        raise RuntimeError("state is in open-world mode; use open_world_train_step")
    return _step(state, np.asarray(lab_idx), np.asarray(unlab_idx))


def open_world_train_step(state: TrainState, lab_idx, unlab_idx) -> losses.LossBreakdown:
    """One open-world step: extended heads see labeled CE plus pairwise BCE."""
    if not state.config.open_world:
        raise RuntimeError("state is not in open-world mode; use train_step")
    return _step(state, np.asarray(lab_idx), np.asarray(unlab_idx))


def _epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    passed = sum(1 for boundary in cfg.lr_decay_epochs if epoch > boundary)
    return cfg.lr / (cfg.lr_decay_factor**passed)


def _epoch_accuracy(state: TrainState, unlabeled) -> float:
    """Clustering accuracy of the first branch's head on the discovery pool."""
    model = state.model
    probs = []
    with torch.no_grad():
        for start in range(0, len(state.unlab_feats), 512):
            out = model.forward_features(state.unlab_feats[start : start + 512])
            probs.append(out[0].unlabeled_probs.numpy())
    probs = np.concatenate(probs)
    if state.config.open_world:
        c_l = model.config.num_labeled
        novel_mask = ~unlabeled.hidden_seen_mask
        pred = probs[novel_mask][:, c_l:].argmax(axis=1)
        return evaluation.clustering_acc(pred, unlabeled.hidden_targets[novel_mask]).acc
    pred = probs.argmax(axis=1)
    return evaluation.clustering_acc(pred, unlabeled.hidden_labels).acc


def train(
    config: TrainConfig,
    labeled: dataio.LabeledSplit,
    unlabeled,
    extractor: Extractor,
    out_dir: str | None = None,
) -> TrainResult:
    """Full discovery run: epochs over the unlabeled split, labeled drawn cyclically."""
    state = make_state(config, labeled, unlabeled, extractor)
    step_fn = open_world_train_step if config.open_world else train_step
    n_unlab = len(state.unlab_feats)
    n_lab = len(labeled.images)
    metrics = []
    acc_history = []
    lab_order = state.rng_batches.permutation(n_lab)
    lab_pos = 0
    for epoch in range(1, config.epochs + 1):
        state.epoch = epoch
        lr = _epoch_lr(config, epoch)
        for group in state.optimizer.param_groups:
            group["lr"] = lr
        unlab_order = state.rng_batches.permutation(n_unlab)
        for start in range(0, n_unlab, config.unlabeled_batch):
            unlab_idx = unlab_order[start : start + config.unlabeled_batch]
            take = min(config.labeled_batch, n_lab)
            if lab_pos + take > n_lab:
                lab_order = state.rng_batches.permutation(n_lab)
                lab_pos = 0
            lab_idx = lab_order[lab_pos : lab_pos + take]
            lab_pos += take
            breakdown = step_fn(state, lab_idx, unlab_idx)
            row = {"kind": "loss", "step": state.step, "epoch": epoch}
            row.update(breakdown.as_dict())
            metrics.append(row)
        acc = _epoch_accuracy(state, unlabeled)
        acc_history.append(acc)
        metrics.append({"kind": "acc", "epoch": epoch, "acc": acc})

    checkpoint_path = metrics_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        checkpoint_path = os.path.join(out_dir, "checkpoint.ncdckpt")
        save_checkpoint(checkpoint_path, state)
        metrics_path = os.path.join(out_dir, "metrics.csv")
        write_metrics(metrics_path, metrics)
    return TrainResult(
        model=state.model,
        banks=state.banks,
        metrics=metrics,
        acc_history=acc_history,
        config=config,
        checkpoint_path=checkpoint_path,
        metrics_path=metrics_path,
    )


# ---------------------------------------------------------------------------
# metrics CSV


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics(path: str, rows: list) -> None:
    lines = [",".join(METRIC_COLUMNS)]
    for row in rows:
        lines.append(",".join(_format_cell(row.get(col)) for col in METRIC_COLUMNS))
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _atomic_write_bytes(path: str, payload: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# checkpoint container: magic, length-prefixed config echo, named float32 blocks


def _write_block(out: bytearray, name: str, array: np.ndarray) -> None:
    data = np.ascontiguousarray(array, dtype="<f4")
    encoded = name.encode("utf-8")
    out += struct.pack("<I", len(encoded))
    out += encoded
    out += struct.pack("<I", data.ndim)
    out += struct.pack(f"<{data.ndim}I", *data.shape)
    out += data.tobytes()


def _echo_text(state: TrainState) -> str:
    model_cfg = state.model.config
    extra = {
        "num_labeled": model_cfg.num_labeled,
        "num_novel": model_cfg.num_novel,
        "epoch": state.epoch,
        "step": state.step,
        "kind": "full",
        "format": 1,
        "rng_augment": json.dumps(state.rng_augment.bit_generator.state),
        "rng_parts": json.dumps(state.rng_parts.bit_generator.state),
        "rng_batches": json.dumps(state.rng_batches.bit_generator.state),
    }
    return configio.encode_fields(state.config, extra=extra)


def save_checkpoint(path: str, state: TrainState) -> None:
    out = bytearray()
    out += CKPT_MAGIC
    echo = _echo_text(state).encode("utf-8")
    out += struct.pack("<I", len(echo))
    out += echo
    for name, tensor in sorted(state.model.state_dict().items()):
        _write_block(out, f"param:{name}", tensor.numpy())
    momenta = state.optimizer.state
    for pi, p in enumerate(state.optimizer.param_groups[0]["params"]):
        buf = momenta.get(p, {}).get("momentum_buffer")
        if buf is not None:
            _write_block(out, f"opt:{pi}:momentum", buf.numpy())
    for bi, banks in enumerate(state.banks):
        _write_block(out, f"bank:{bi}:features", banks.feature_bank.snapshot().numpy())
        if banks.part_dict is not None:
            _write_block(out, f"bank:{bi}:dict", banks.part_dict.snapshot().numpy())
    _atomic_write_bytes(path, bytes(out))


def save_extractor(path: str, extractor: Extractor, config: TrainConfig) -> None:
    out = bytearray()
    out += CKPT_MAGIC
    echo = configio.encode_fields(config, extra={"kind": "extractor", "format": 1}).encode("utf-8")
    out += struct.pack("<I", len(echo))
    out += echo
    for name, tensor in sorted(extractor.state_dict().items()):
        _write_block(out, f"param:{name}", tensor.numpy())
    _atomic_write_bytes(path, bytes(out))


def _read_blocks(raw: bytes, offset: int) -> dict:
    blocks = {}
    while offset < len(raw):
        def need(count, what):
            nonlocal offset
            if offset + count > len(raw):
                raise CheckpointFormatError(f"truncated {what} at offset {offset}")
            chunk = raw[offset : offset + count]
            offset += count
            return chunk

        (name_len,) = struct.unpack("<I", need(4, "block name length"))
        name = need(name_len, "block name").decode("utf-8")
        (rank,) = struct.unpack("<I", need(4, "block rank"))
        shape = struct.unpack(f"<{rank}I", need(4 * rank, "block dims"))
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(need(count * 4, f"block {name} payload"), dtype="<f4")
        blocks[name] = data.reshape(shape).copy()
    return blocks


@dataclass
class CheckpointData:
    kind: str
    config: TrainConfig
    blocks: dict
    extras: dict

    def build_extractor(self) -> Extractor:
        extractor = Extractor(self.config.in_channels, tuple(self.config.stem_channels))
        prefix = "param:"
        payload = {
            name[len(prefix):]: torch.as_tensor(arr)
            for name, arr in self.blocks.items()
            if name.startswith(prefix)
        }
        extractor.load_state_dict(payload)
        for p in extractor.parameters():
            p.requires_grad_(False)
        return extractor

    def build_model(self) -> TwoBranchModel:
        if self.kind != "full":
            raise CheckpointFormatError("checkpoint holds only an extractor")
        cfg = self.config
        model_cfg = ModelConfig(
            num_labeled=int(self.extras["num_labeled"]),
            num_novel=int(self.extras["num_novel"]),
            in_channels=cfg.in_channels,
            image_size=cfg.image_size,
            stem_channels=tuple(cfg.stem_channels),
            embed_dim=cfg.embed_dim,
            branch_kinds=cfg.branch_kinds,
            open_world=cfg.open_world,
        )
        model = TwoBranchModel(model_cfg)
        payload = {
            name[len("param:"):]: torch.as_tensor(arr)
            for name, arr in self.blocks.items()
            if name.startswith("param:")
        }
        model.load_state_dict(payload)
        model.freeze_extractor()
        model.training_started = True
        return model

    def build_banks(self) -> list:
        cfg = self.config
        banks = []
        for bi, kind in enumerate(cfg.branch_kinds):
            cap = cfg.global_bank_capacity if kind == "global" else cfg.local_bank_capacity
            feature_bank = membank.FifoBank(cap, cfg.embed_dim)
            rows = self.blocks.get(f"bank:{bi}:features")
            if rows is not None and len(rows):
                feature_bank.load_rows(torch.as_tensor(rows))
            part_dict = None
            if kind == "local":
                part_dict = membank.FifoBank(cfg.dict_capacity, cfg.embed_dim)
                rows = self.blocks.get(f"bank:{bi}:dict")
                if rows is not None and len(rows):
                    part_dict.load_rows(torch.as_tensor(rows))
            banks.append(BranchBanks(feature_bank=feature_bank, part_dict=part_dict))
        return banks


def load_checkpoint(path: str) -> CheckpointData:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CKPT_MAGIC:
        raise CheckpointFormatError(f"bad magic at offset 0: expected {CKPT_MAGIC!r}")
    if len(raw) < 12:
        raise CheckpointFormatError("truncated config length at offset 8")
    (echo_len,) = struct.unpack("<I", raw[8:12])
    if 12 + echo_len > len(raw):
        raise CheckpointFormatError(f"truncated config echo at offset 12")
    echo = raw[12 : 12 + echo_len].decode("utf-8")
    kv = configio.parse_kv_text(echo)
    config, extras = configio.coerce_dataclass(TrainConfig, kv, ignore_extra=True)
    blocks = _read_blocks(raw, 12 + echo_len)
    return CheckpointData(
        kind=extras.get("kind", "full"), config=config, blocks=blocks, extras=extras
    )
