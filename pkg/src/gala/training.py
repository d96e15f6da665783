"""Losses and the alternating two-tower training loop.

The ranking loss is a hard-margin triplet over cosine similarities with all
in-batch negatives; the contrastive term treats a self-transformed copy of
each foreground as an extra negative for its own background. Stages train one
tower while the other stays frozen; the schedule starts from the background
tower and alternates, so ``rounds = 0`` reproduces the fixed-foreground
baseline and ``rounds = 1`` trains background then foreground.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .dataset import PairRecord, preprocess
from .encoder import EncoderConfig, TowerWeights, create_tower
from . import transforms

REFERENCE_TOTAL_BATCH = 8 * 40  # 8 devices x 40 per device


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    margin_t: float = 0.3
    margin_c: float = 0.1
    lr: float = 8e-5
    batch_size: int = 40
    rounds: int = 1
    epochs: int = 30
    contrastive: bool = True
    mask_aug: bool = True
    alternating: bool = True
    compose_transforms: bool = False
    hardest_negative: bool = False
    reverse_order: bool = False
    rho_max: float = transforms.RHO_MAX_DEFAULT
    peak_gain: float = transforms.PEAK_GAIN_DEFAULT
    blur_radius: int = transforms.BLUR_RADIUS_DEFAULT
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.margin_t < 0 or self.margin_c < 0:
            raise ValueError("margins must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")


@dataclass(frozen=True)
class TripletBatch:
    """Embeddings for one step: anchors (backgrounds), their positives, and
    optionally the self-transformed positives used by the contrastive term."""

    anchors: np.ndarray
    positives: np.ndarray
    transformed: np.ndarray | None = None

    def __post_init__(self):
        a = np.asarray(self.anchors, dtype=np.float64)
        p = np.asarray(self.positives, dtype=np.float64)
        if a.shape != p.shape or a.ndim != 2:
            raise ValueError("anchors and positives must be matching (B, D) arrays")
        if self.transformed is not None:
            t = np.asarray(self.transformed, dtype=np.float64)
            if t.shape != a.shape:
                raise ValueError("transformed must match anchors shape")
            object.__setattr__(self, "transformed", t)
        object.__setattr__(self, "anchors", a)
        object.__setattr__(self, "positives", p)

    @property
    def size(self) -> int:
        return self.anchors.shape[0]


@dataclass
class TowerPair:
    background: TowerWeights
    foreground: TowerWeights


def triplet_loss(s_pos: float, s_neg: float, margin: float) -> float:
    """Hinge on similarities: max(0, s_neg - s_pos + margin)."""
    return max(0.0, s_neg - s_pos + margin)


def _normalize_rows(x: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.normalize(x, dim=1, eps=0.0)


def batch_loss_torch(
    anchors: torch.Tensor,
    positives: torch.Tensor,
    transformed: torch.Tensor | None,
    margin_t: float,
    margin_c: float,
    hardest_negative: bool = False,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Differentiable loss; returns (total, ranking term, contrastive term)."""
    b = anchors.shape[0]
    if b < 2:
        raise ValueError("batch must contain at least 2 pairs for in-batch negatives")
    a = _normalize_rows(anchors)
    p = _normalize_rows(positives)

    sims = a @ p.T
    pos = sims.diagonal()
    hinge = torch.relu(sims - pos[:, None] + margin_t)
    off_diag = ~torch.eye(b, dtype=torch.bool, device=sims.device)
    if hardest_negative:
        loss_t = hinge.masked_fill(~off_diag, float("-inf")).max(dim=1).values.mean()
    else:
        loss_t = hinge[off_diag].mean()

    if transformed is not None:
        t = _normalize_rows(transformed)
        s_neg = (a * t).sum(dim=1)
        loss_c = torch.relu(s_neg - pos + margin_c).mean()
    else:
        loss_c = torch.zeros((), dtype=anchors.dtype, device=anchors.device)
    return loss_t + loss_c, loss_t, loss_c


def batch_loss(batch: TripletBatch, cfg: TrainConfig) -> float:
    """Total loss (ranking + contrastive) for a batch of embeddings."""
    t = None if batch.transformed is None else torch.from_numpy(batch.transformed)
    total, _, _ = batch_loss_torch(
        torch.from_numpy(batch.anchors),
        torch.from_numpy(batch.positives),
        t,
        cfg.margin_t,
        cfg.margin_c,
        cfg.hardest_negative,
    )
    return float(total)


def scaled_lr(base_lr: float, world_size: int, per_device_batch: int) -> float:
    """Linear learning-rate scaling relative to the 8 x 40 reference setup."""
    return base_lr * (world_size * per_device_batch) / REFERENCE_TOTAL_BATCH


def _prepare_step(
    pairs: list[PairRecord],
    indices: np.ndarray,
    cfg: TrainConfig,
    donors: list,
    rng: np.random.Generator,
):
    """Materialize one step's input arrays (with per-sample augmentation seeds)."""
    size = cfg.encoder.input_size
    mean = cfg.encoder.mean
    bg_arrays, fg_arrays, tf_arrays = [], [], []
    for idx in indices:
        pair = pairs[int(idx)]
        fg, bg = pair.foreground, pair.background
        if cfg.mask_aug:
            fg, bg = transforms.augment_masks(fg, bg, seed=int(rng.integers(2**31)))
        bg_arrays.append(preprocess(bg.image, size, mean))
        fg_arrays.append(preprocess(fg.image, size, mean))
        if cfg.contrastive:
            tf_seed = int(rng.integers(2**31))
            for attempt in range(5):
                try:
                    tfg, _ = transforms.sample_transform(
                        fg,
                        donors,
                        seed=tf_seed + attempt,
                        rho_max=cfg.rho_max,
                        peak_gain=cfg.peak_gain,
                        blur_radius=cfg.blur_radius,
                        compose=cfg.compose_transforms,
                    )
                    break
                except ValueError:
                    continue
            else:
                tfg = fg  # degenerate fallback: the untransformed positive
            tf_arrays.append(preprocess(tfg.image, size, mean))

    def to_torch(arrays):
        return torch.from_numpy(np.stack(arrays).astype(np.float32)).permute(0, 3, 1, 2).contiguous()

    transformed = to_torch(tf_arrays) if cfg.contrastive else None
    return to_torch(bg_arrays), to_torch(fg_arrays), transformed


def train_stage(
    trainable_tower: str,
    towers: TowerPair,
    pairs: list[PairRecord],
    cfg: TrainConfig,
    seed: int,
    log: list | None = None,
    stage_name: str | None = None,
) -> TowerWeights:
    """Run one training stage; ``trainable_tower`` is background, foreground, or both.

    The non-trainable tower is frozen (no optimizer state, no gradients) and is
    byte-identical before and after the stage.
    """
    if trainable_tower not in ("background", "foreground", "both"):
        raise ValueError(f"unknown trainable tower {trainable_tower!r}")
    if len(pairs) < 2:
        raise ValueError("need at least 2 training pairs")

    stage_name = stage_name or trainable_tower
    train_bg = trainable_tower in ("background", "both")
    train_fg = trainable_tower in ("foreground", "both")
    for p in towers.background.net.parameters():
        p.requires_grad_(train_bg)
    for p in towers.foreground.net.parameters():
        p.requires_grad_(train_fg)
    towers.background.net.train(train_bg)
    towers.foreground.net.train(train_fg)

    trainable_params = []
    if train_bg:
        trainable_params += list(towers.background.net.parameters())
    if train_fg:
        trainable_params += list(towers.foreground.net.parameters())
    optimizer = torch.optim.Adam(trainable_params, lr=cfg.lr)

    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    donors = [(p.pair_id, p.background.image) for p in pairs]

    step = 0
    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(order), cfg.batch_size):
            indices = order[start : start + cfg.batch_size]
            if len(indices) < 2:
                continue
            bg_in, fg_in, tf_in = _prepare_step(pairs, indices, cfg, donors, rng)

            if train_bg:
                anchors = towers.background.forward_batch(bg_in)
            else:
                with torch.no_grad():
                    anchors = towers.background.forward_batch(bg_in)
            if train_fg:
                positives = towers.foreground.forward_batch(fg_in)
                transformed = towers.foreground.forward_batch(tf_in) if tf_in is not None else None
            else:
                with torch.no_grad():
                    positives = towers.foreground.forward_batch(fg_in)
                    transformed = towers.foreground.forward_batch(tf_in) if tf_in is not None else None

            total, loss_t, loss_c = batch_loss_torch(
                anchors, positives, transformed, cfg.margin_t, cfg.margin_c, cfg.hardest_negative
            )
            if not torch.isfinite(total):
                raise TrainingDiverged(
                    f"loss diverged at stage={stage_name} step={step}: "
                    f"L_t={loss_t.item()} L_c={loss_c.item()}"
                )
            optimizer.zero_grad()
            total.backward()
            optimizer.step()

            if log is not None:
                log.append(
                    {
                        "step": step,
                        "stage": stage_name,
                        "L_t": loss_t.item(),
                        "L_c": loss_c.item(),
                        "total": total.item(),
                    }
                )
            step += 1

    towers.background.net.eval()
    towers.foreground.net.eval()
    if trainable_tower == "background":
        return towers.background
    if trainable_tower == "foreground":
        return towers.foreground
    return towers.foreground


def stage_schedule(rounds: int, reverse_order: bool = False) -> list[str]:
    """rounds + 1 stages, alternating; rounds=0 trains only the first tower."""
    first, second = ("foreground", "background") if reverse_order else ("background", "foreground")
    return [first if i % 2 == 0 else second for i in range(rounds + 1)]


def clone_tower(weights: TowerWeights) -> TowerWeights:
    """Independent copy: same config, separately-owned parameters."""
    import copy

    return TowerWeights(config=weights.config, net=copy.deepcopy(weights.net), trainable=weights.trainable)


def _initial_towers(cfg: TrainConfig, seed: int, init: TowerPair | None) -> TowerPair:
    if init is not None:
        return TowerPair(background=clone_tower(init.background), foreground=clone_tower(init.foreground))
    return TowerPair(
        background=create_tower(cfg.encoder, seed=seed),
        foreground=create_tower(cfg.encoder, seed=seed + 1),
    )


def alternating_train(
    pairs: list[PairRecord],
    cfg: TrainConfig,
    seed: int,
    log: list | None = None,
    init: TowerPair | None = None,
) -> TowerPair:
    """Train per the alternating schedule; towers start from ``init`` (cloned)
    when given, else from freshly seeded weights."""
    towers = _initial_towers(cfg, seed, init)
    for i, stage in enumerate(stage_schedule(cfg.rounds, cfg.reverse_order)):
        train_stage(stage, towers, pairs, cfg, seed=seed + 100 + i, log=log, stage_name=f"{i}:{stage}")
    return towers


def train_model(
    pairs: list[PairRecord],
    cfg: TrainConfig,
    seed: int,
    log: list | None = None,
    init: TowerPair | None = None,
) -> TowerPair:
    """Entry point covering the ablation arms: alternating or joint training."""
    if cfg.alternating:
        return alternating_train(pairs, cfg, seed, log=log, init=init)
    towers = _initial_towers(cfg, seed, init)
    train_stage("both", towers, pairs, cfg, seed=seed + 100, log=log, stage_name="0:both")
    return towers


def _pretext_views(fg, rng: np.random.Generator, size: int, mean) -> tuple[np.ndarray, np.ndarray]:
    """Two augmented views of one cutout: random flip + global brightness gain.

    These are the invariances the pretraining bakes in, so a frozen pretrained
    tower is near-blind to flips and illumination scaling.
    """
    views = []
    for _ in range(2):
        arr = fg.image.data
        if rng.random() < 0.5:
            arr = arr[:, ::-1]
        gain = rng.uniform(0.6, 1.4)
        arr = np.clip(arr * gain, 0.0, 1.0)
        views.append(preprocess(arr, size, mean))
    return views[0], views[1]


def pretrain_tower(
    fgs: list,
    encoder_cfg: EncoderConfig,
    seed: int = 0,
    epochs: int = 10,
    batch_size: int = 40,
    lr: float = 1e-3,
    margin: float = 0.3,
    log: list | None = None,
) -> TowerWeights:
    """Instance-discrimination pretraining: a desk-scale surrogate for a
    generically pretrained backbone.

    Two flip/brightness-augmented views of each cutout form a positive pair;
    other cutouts in the batch are negatives. The resulting features are
    instance-discriminative but deliberately invariant to flips and brightness.
    """
    if len(fgs) < 2:
        raise ValueError("need at least 2 instances to pretrain")
    tower = create_tower(encoder_cfg, seed=seed)
    for p in tower.net.parameters():
        p.requires_grad_(True)
    tower.net.train(True)
    optimizer = torch.optim.Adam(tower.net.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)

    step = 0
    for _epoch in range(epochs):
        order = rng.permutation(len(fgs))
        for start in range(0, len(order), batch_size):
            indices = order[start : start + batch_size]
            if len(indices) < 2:
                continue
            views_a, views_b = [], []
            for idx in indices:
                va, vb = _pretext_views(fgs[int(idx)], rng, encoder_cfg.input_size, encoder_cfg.mean)
                views_a.append(va)
                views_b.append(vb)

            def to_torch(arrays):
                return torch.from_numpy(np.stack(arrays).astype(np.float32)).permute(0, 3, 1, 2).contiguous()

            za = tower.forward_batch(to_torch(views_a))
            zb = tower.forward_batch(to_torch(views_b))
            total, loss_t, _ = batch_loss_torch(za, zb, None, margin, 0.0)
            if not torch.isfinite(total):
                raise TrainingDiverged(f"pretraining diverged at step {step}")
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            if log is not None:
                log.append({"step": step, "stage": "pretrain", "L_t": loss_t.item(), "L_c": 0.0, "total": total.item()})
            step += 1
    tower.net.eval()
    return tower


def write_log(log: list, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in log:
            fh.write(json.dumps(row) + "\n")


def config_for_variant(base: TrainConfig, variant: str) -> TrainConfig:
    """Named ablation arms used by evaluation and tests.

    overall         alternating + mask aug + contrastive
    no_contrastive  alternating + mask aug (a.k.a. aug+alternating)
    baseline        rounds=0 (background only) + mask aug, foreground stays at init
    aug             joint training + mask aug
    direct          joint training, no mask aug, no contrastive
    """
    arms = {
        "overall": dict(alternating=True, mask_aug=True, contrastive=True),
        "no_contrastive": dict(alternating=True, mask_aug=True, contrastive=False),
        "baseline": dict(alternating=True, mask_aug=True, contrastive=False, rounds=0),
        "aug": dict(alternating=False, mask_aug=True, contrastive=False),
        "direct": dict(alternating=False, mask_aug=False, contrastive=False),
    }
    if variant not in arms:
        raise ValueError(f"unknown variant {variant!r}; pick from {sorted(arms)}")
    return replace(base, **arms[variant])
