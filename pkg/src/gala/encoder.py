"""The two embedding towers: one for background queries, one for foreground
cutouts. Both map a preprocessed image to a unit-norm vector; they never share
weights.

The default backbone is a compact CNN (4 stride-2 conv stages, global average
pool, linear projection) sized so training-dependent tests run in minutes on a
CPU. A ``pretrained`` backbone slot adapts any external torch feature
extractor behind the same contract.

Checkpoint format: ``GALA`` magic, u32 version, u32 config-JSON length, the
config JSON, then raw little-endian float32 parameters in declaration order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .core import BackgroundQuery, Embedding, ForegroundInstance, l2_normalize
from .dataset import preprocess

CHECKPOINT_MAGIC = b"GALA"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    backbone: str = "toy_cnn"
    embed_dim: int = 128
    input_size: int = 224
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    channels: tuple[int, int, int, int] = (16, 32, 64, 128)

    def __post_init__(self):
        if self.backbone not in ("toy_cnn", "pretrained"):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.embed_dim <= 0 or self.input_size <= 0:
            raise ValueError("embed_dim and input_size must be positive")
        if self.backbone == "toy_cnn" and self.input_size % 16 != 0:
            raise ValueError("toy_cnn needs input_size divisible by 16")

    def to_json(self) -> str:
        return json.dumps(
            {
                "backbone": self.backbone,
                "embed_dim": self.embed_dim,
                "input_size": self.input_size,
                "mean": list(self.mean),
                "channels": list(self.channels),
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(blob: str) -> "EncoderConfig":
        obj = json.loads(blob)
        return EncoderConfig(
            backbone=obj["backbone"],
            embed_dim=int(obj["embed_dim"]),
            input_size=int(obj["input_size"]),
            mean=tuple(obj["mean"]),
            channels=tuple(obj["channels"]),
        )

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


class ToyBackbone(nn.Module):
    """4 stride-2 conv+tanh stages -> global average pool -> linear projection.

    Conv weights are over-scaled at init: pushing tanh toward saturation keeps
    the cosines between random-feature embeddings spread out, so a frozen tower
    at initialization is a usable (diverse) target for the alternating schedule
    instead of a collapsed one.
    """

    INIT_GAIN = 3.0

    def __init__(self, config: EncoderConfig):
        super().__init__()
        layers: list[nn.Module] = []
        prev = 3
        for ch in config.channels:
            conv = nn.Conv2d(prev, ch, kernel_size=3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.mul_(self.INIT_GAIN)
            layers.append(conv)
            layers.append(nn.Tanh())
            prev = ch
        self.stages = nn.Sequential(*layers)
        self.proj = nn.Linear(prev, config.embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.stages(x)
        return self.proj(h.mean(dim=(2, 3)))


class AdapterBackbone(nn.Module):
    """Wrap any feature extractor (image -> vector) with a projection to embed_dim."""

    def __init__(self, features: nn.Module, feature_dim: int, embed_dim: int):
        super().__init__()
        self.features = features
        self.proj = nn.Linear(feature_dim, embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(self.features(x))


@dataclass
class TowerWeights:
    """One tower: its config, torch module, and a trainable flag."""

    config: EncoderConfig
    net: nn.Module
    trainable: bool = True

    def fingerprint(self) -> str:
        return self.config.fingerprint()

    def parameters_in_order(self) -> list[torch.Tensor]:
        return [p for _, p in self.net.named_parameters()]

    def forward_batch(self, batch: torch.Tensor) -> torch.Tensor:
        """Differentiable forward: (B, 3, S, S) -> (B, D) unit-norm rows."""
        expected = self.config.input_size
        if batch.shape[-2:] != (expected, expected) or batch.shape[1] != 3:
            raise ValueError(f"expected (B, 3, {expected}, {expected}) input, got {tuple(batch.shape)}")
        out = self.net(batch)
        return nn.functional.normalize(out, dim=1, eps=0.0)


def create_tower(
    config: EncoderConfig,
    seed: int = 0,
    trainable: bool = True,
    feature_extractor: nn.Module | None = None,
    feature_dim: int | None = None,
) -> TowerWeights:
    torch.manual_seed(seed)
    if config.backbone == "toy_cnn":
        net: nn.Module = ToyBackbone(config)
    else:
        if feature_extractor is None or feature_dim is None:
            raise ValueError("pretrained backbone needs feature_extractor and feature_dim")
        net = AdapterBackbone(feature_extractor, feature_dim, config.embed_dim)
    return TowerWeights(config=config, net=net, trainable=trainable)


def _to_batch(arrays: list[np.ndarray]) -> torch.Tensor:
    stacked = np.stack(arrays).astype(np.float32)
    return torch.from_numpy(stacked).permute(0, 3, 1, 2).contiguous()


def toy_backbone_forward(x: np.ndarray, weights: TowerWeights) -> np.ndarray:
    """Forward one preprocessed image through the backbone, pre-normalization."""
    expected = weights.config.input_size
    if x.shape != (expected, expected, 3):
        raise ValueError(f"expected ({expected}, {expected}, 3) input, got {x.shape}")
    weights.net.eval()
    with torch.no_grad():
        out = weights.net(_to_batch([np.asarray(x)]))
    return out.detach().numpy()[0]


def embed_image_array(image, weights: TowerWeights) -> Embedding:
    pre = preprocess(image, weights.config.input_size, weights.config.mean)
    return l2_normalize(toy_backbone_forward(pre, weights))


def embed_foreground(fg: ForegroundInstance, weights: TowerWeights) -> Embedding:
    return embed_image_array(fg.image, weights)


def embed_background(bg: BackgroundQuery, weights: TowerWeights) -> Embedding:
    if bg.box is None:
        raise ValueError("placement module required")
    return embed_image_array(bg.image, weights)


def embed_batch(images: list, weights: TowerWeights, batch_size: int = 64) -> np.ndarray:
    """Embed many images; returns (N, D) float32 with unit-norm rows."""
    cfg = weights.config
    pres = [preprocess(im, cfg.input_size, cfg.mean) for im in images]
    weights.net.eval()
    rows = []
    with torch.no_grad():
        for start in range(0, len(pres), batch_size):
            out = weights.net(_to_batch(pres[start : start + batch_size]))
            rows.append(out.detach().numpy())
    mat = np.concatenate(rows, axis=0).astype(np.float64)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("degenerate embedding")
    return (mat / norms).astype(np.float32)


def serialize_checkpoint(weights: TowerWeights) -> bytes:
    config_json = weights.config.to_json().encode()
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    blob += struct.pack("<I", len(config_json))
    blob += config_json
    for p in weights.parameters_in_order():
        blob += p.detach().cpu().numpy().astype("<f4").tobytes()
    return bytes(blob)


def save_checkpoint(weights: TowerWeights, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_checkpoint(weights))


def checkpoint_hash(weights: TowerWeights) -> str:
    return hashlib.sha256(serialize_checkpoint(weights)).hexdigest()


def load_checkpoint(
    path,
    expect_config: EncoderConfig | None = None,
    feature_extractor: nn.Module | None = None,
    feature_dim: int | None = None,
) -> TowerWeights:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a tower checkpoint (bad magic)")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    config_len = struct.unpack("<I", blob[8:12])[0]
    if len(blob) < 12 + config_len:
        raise ValueError("truncated checkpoint (config)")
    config = EncoderConfig.from_json(blob[12 : 12 + config_len].decode())
    if expect_config is not None and config.fingerprint() != expect_config.fingerprint():
        raise ValueError("config fingerprint mismatch")

    weights = create_tower(config, seed=0, feature_extractor=feature_extractor, feature_dim=feature_dim)
    payload = blob[12 + config_len :]
    offset = 0
    with torch.no_grad():
        for p in weights.parameters_in_order():
            nbytes = p.numel() * 4
            if offset + nbytes > len(payload):
                raise ValueError("truncated checkpoint (parameters)")
            arr = np.frombuffer(payload, dtype="<f4", count=p.numel(), offset=offset).reshape(p.shape)
            p.copy_(torch.from_numpy(arr.copy()))
            offset += nbytes
    if offset != len(payload):
        raise ValueError("checkpoint parameter size mismatch")
    return weights
