"""Encoder, projection head and linear classifier for desk-scale training.

The desk encoder is a stack of stride-2 conv stages (each conv + group norm +
ReLU) followed by global average pooling, so it accepts any input resolution.
The ``reference`` preset only documents the reference-scale backbone shape
(ResNet-50, 2048-d features); building it is refused.

Checkpoints are versioned containers of plain dicts and tensors; reloading is
bit-exact for inference.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
from torch import nn

from .config import EncoderConfig, ProjectionConfig
from .errors import CheckpointError, ConfigError

logger = logging.getLogger("patchcl")

CHECKPOINT_VERSION = 1
_NORM_GROUPS = 8


class ConvEncoder(nn.Module):
    """Stride-2 conv stages + global average pooling -> feature vector."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        config.validate()
        if config.preset != "desk":
            raise ConfigError(
                f"encoder preset {config.preset!r} is documentation-only; "
                "only the desk preset is buildable"
            )
        self.config = config
        stages = []
        prev = 3
        for channels in config.stage_channels:
            # Bias is dropped: the following GroupNorm would absorb it anyway.
            stages.append(
                nn.Conv2d(prev, channels, kernel_size=3, stride=2, padding=1, bias=False)
            )
            stages.append(nn.GroupNorm(math.gcd(_NORM_GROUPS, channels), channels))
            stages.append(nn.ReLU(inplace=True))
            prev = channels
        self.stages = nn.Sequential(*stages)
        self.to_features = (
            nn.Identity() if prev == config.feature_dim else nn.Linear(prev, config.feature_dim)
        )

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ConfigError(f"expected NCHW image batch with 3 channels, got {tuple(x.shape)}")
        h = self.stages(x)
        return self.to_features(h.mean(dim=(2, 3)))


class ProjectionHead(nn.Module):
    """MLP (or bias-free linear) projection with unit-norm outputs."""

    def __init__(self, in_dim: int, config: ProjectionConfig):
        super().__init__()
        config.validate()
        self.config = config
        if config.hidden_dim is None:
            self.net = nn.Linear(in_dim, config.output_dim, bias=False)
        else:
            self.net = nn.Sequential(
                nn.Linear(in_dim, config.hidden_dim),
                nn.ReLU(inplace=True),
                nn.Linear(config.hidden_dim, config.output_dim),
            )

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        raw = self.net(h)
        norms = torch.linalg.vector_norm(raw, dim=1, keepdim=True)
        if bool((norms < 1e-12).any()):
            logger.warning("projection produced a near-zero row; epsilon guard engaged")
        return raw / norms.clamp_min(1e-12)


class LinearClassifier(nn.Module):
    """Affine map from frozen features to class logits."""

    def __init__(self, in_dim: int, num_classes: int):
        super().__init__()
        self.linear = nn.Linear(in_dim, num_classes)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.linear(h)


def _iter_init_tensors(module: nn.Module) -> Iterator[tuple[torch.Tensor, int]]:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            yield m.weight, fan_in
            if m.bias is not None:
                yield m.bias, fan_in
        elif isinstance(m, nn.Linear):
            fan_in = m.in_features
            yield m.weight, fan_in
            if m.bias is not None:
                yield m.bias, fan_in


def init_parameters(module: nn.Module, seed: int) -> None:
    """Seeded uniform fan-in init; the only torch RNG use in the package."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for tensor, fan_in in _iter_init_tensors(module):
            bound = 1.0 / math.sqrt(fan_in)
            tensor.uniform_(-bound, bound, generator=gen)


def build_model(
    encoder_config: EncoderConfig, projection_config: ProjectionConfig, seed: int
) -> tuple[ConvEncoder, ProjectionHead]:
    encoder = ConvEncoder(encoder_config)
    head = ProjectionHead(encoder_config.feature_dim, projection_config)
    init_parameters(encoder, seed)
    init_parameters(head, seed + 1)
    return encoder, head


def state_digest(module: nn.Module) -> str:
    """Deterministic short digest of a module's parameter and buffer values."""
    import hashlib

    h = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        h.update(name.encode())
        h.update(state[name].detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()[:12]


def images_to_tensor(images: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(N, H, W, 3) float array -> contiguous NCHW tensor."""
    arr = np.ascontiguousarray(images)
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous().to(dtype)


def encode_images(
    encoder: ConvEncoder, images: np.ndarray, batch_size: int = 256
) -> np.ndarray:
    """Deterministic inference-mode features for a stack of HWC images."""
    encoder.eval()
    feats = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            x = images_to_tensor(images[start : start + batch_size])
            feats.append(encoder(x).cpu().numpy())
    return np.concatenate(feats, axis=0)


def save_checkpoint(
    path: str | Path,
    encoder: ConvEncoder,
    head: ProjectionHead | None,
    meta: dict | None = None,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "encoder_config": {
            "preset": encoder.config.preset,
            "stage_channels": list(encoder.config.stage_channels),
            "feature_dim": encoder.config.feature_dim,
        },
        "encoder_state": encoder.state_dict(),
        "meta": dict(meta or {}),
    }
    if head is not None:
        payload["projection_config"] = {
            "hidden_dim": head.config.hidden_dim,
            "output_dim": head.config.output_dim,
        }
        payload["projection_state"] = head.state_dict()
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[ConvEncoder, ProjectionHead | None, dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu")
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {payload.get('format_version')!r}"
        )
    enc_cfg = EncoderConfig(
        preset=payload["encoder_config"]["preset"],
        stage_channels=tuple(payload["encoder_config"]["stage_channels"]),
        feature_dim=payload["encoder_config"]["feature_dim"],
    )
    encoder = ConvEncoder(enc_cfg)
    encoder.load_state_dict(payload["encoder_state"])
    encoder.eval()
    head = None
    if "projection_state" in payload:
        proj_cfg = ProjectionConfig(
            hidden_dim=payload["projection_config"]["hidden_dim"],
            output_dim=payload["projection_config"]["output_dim"],
        )
        head = ProjectionHead(enc_cfg.feature_dim, proj_cfg)
        head.load_state_dict(payload["projection_state"])
        head.eval()
    return encoder, head, payload.get("meta", {})
