"""Self-supervised pretraining loop: LR schedule, SGD with momentum, tracing.

The learning rate follows the linear-scaling rule lr = base * C * (N + 1) /
256, ramps linearly over the warmup epochs and then decays along a half
cosine to (near) zero. The optimizer is classical coupled-weight-decay SGD:

    v <- momentum * v + (grad + weight_decay * param)
    param <- param - lr * v

Training is bit-reproducible: group shuffling and per-view augmentation seeds
derive from the run seed through fixed-purpose seed streams, and all compute
stays on CPU tensors.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .batching import assemble
from .config import AugmentPolicy, TrainConfig
from .corpus import PatchGroup
from .errors import ConfigError, DataError, NumericError
from .losses import LossConfig, multi_positive_loss
from .model import ConvEncoder, ProjectionHead, images_to_tensor, save_checkpoint

_STREAM_SHUFFLE = 10
_STREAM_VIEWS = 11
_STREAM_TRIM = 12


def scaled_lr(config: TrainConfig) -> float:
    """Base LR scaled by the nominal per-side view budget over the 256 reference.

    Using the nominal budget (rather than the realized C * (N + 1), which can
    fall short when N + 1 does not divide the budget) keeps the scaled LR
    identical across neighbor counts at a fixed budget.
    """
    return config.base_lr * config.view_budget / 256.0


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Per-epoch LR: linear warmup, then cosine decay to zero."""
    if not 0 <= epoch < config.epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {config.epochs})")
    peak = scaled_lr(config)
    if epoch < config.warmup_epochs:
        return peak * (epoch + 1) / config.warmup_epochs
    span = config.epochs - config.warmup_epochs
    progress = (epoch - config.warmup_epochs) / span
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    """Per-parameter velocity buffers plus a step counter."""

    velocities: list[torch.Tensor]
    step: int = 0

    @classmethod
    def for_params(cls, params: Sequence[torch.Tensor]) -> "OptimizerState":
        return cls(velocities=[torch.zeros_like(p) for p in params])


def sgd_step(
    params: Sequence[torch.Tensor],
    grads: Sequence[torch.Tensor],
    state: OptimizerState,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> None:
    """One in-place momentum-SGD update; rejects non-finite gradients."""
    if len(params) != len(grads) or len(params) != len(state.velocities):
        raise NumericError("params, grads and velocities must align")
    for idx, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise NumericError(f"gradient shape {tuple(g.shape)} != param {tuple(p.shape)}")
        if not bool(torch.isfinite(g).all()):
            raise NumericError(
                f"non-finite gradient in parameter {idx} at step {state.step}; aborting update"
            )
    with torch.no_grad():
        for p, g, v in zip(params, grads, state.velocities):
            v.mul_(momentum).add_(g + weight_decay * p)
            p.sub_(lr * v)
    state.step += 1


@dataclass
class TraceRow:
    epoch: int
    step: int
    lr: float
    loss: float


@dataclass
class PretrainResult:
    trace: list[TraceRow]
    trace_path: Path
    checkpoint_paths: list[Path]
    final_checkpoint: Path


def write_trace(rows: Sequence[TraceRow], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "step", "lr", "loss"])
        for row in rows:
            writer.writerow([row.epoch, row.step, repr(row.lr), repr(row.loss)])


def _trim_groups(groups: Sequence[PatchGroup], nearby_count: int, seed: int) -> list[PatchGroup]:
    """Deterministically keep exactly ``nearby_count`` neighbors per group."""
    trimmed = []
    for idx, g in enumerate(groups):
        if len(g.nearby) < nearby_count:
            raise DataError(
                f"group {g.slide_id}/{g.group_id} has {len(g.nearby)} neighbors, "
                f"need {nearby_count}: manifest and trainer config disagree"
            )
        if len(g.nearby) == nearby_count:
            trimmed.append(g)
            continue
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(_STREAM_TRIM, idx))
        )
        keep = sorted(rng.choice(len(g.nearby), size=nearby_count, replace=False).tolist())
        trimmed.append(
            PatchGroup(g.slide_id, g.group_id, g.center, [g.nearby[k] for k in keep])
        )
    return trimmed


def pretrain(
    groups: Sequence[PatchGroup],
    encoder: ConvEncoder,
    head: ProjectionHead,
    config: TrainConfig,
    policy: AugmentPolicy,
    out_dir: str | Path,
    seed: int,
) -> PretrainResult:
    """Run the full pretraining loop and emit trace + checkpoints.

    Each step assembles one multiview batch, projects it to unit-norm
    embeddings, evaluates the configured loss variant and applies one SGD
    update at the current epoch's LR. Groups are reshuffled every epoch;
    a trailing chunk smaller than C groups is dropped.
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups = _trim_groups(groups, config.nearby_count, seed)
    centers = config.centers_per_batch
    if len(groups) < centers:
        raise DataError(
            f"manifest provides {len(groups)} groups but one batch needs {centers}"
        )

    loss_config = LossConfig(config.temperature, config.variant)
    params = [p for p in encoder.parameters()] + [p for p in head.parameters()]
    state = OptimizerState.for_params(params)
    encoder.train()
    head.train()

    rows: list[TraceRow] = []
    checkpoint_paths: list[Path] = []
    ckpt_dir = out_dir / "checkpoints"

    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        shuffle_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(_STREAM_SHUFFLE, epoch))
        )
        order = shuffle_rng.permutation(len(groups))
        num_steps = len(groups) // centers
        for step in range(num_steps):
            chunk = [groups[i] for i in order[step * centers : (step + 1) * centers]]
            view_seed = int(
                np.random.SeedSequence(entropy=seed, spawn_key=(_STREAM_VIEWS, epoch, step))
                .generate_state(1, dtype=np.uint64)[0]
                % (2**63)
            )
            batch = assemble(chunk, policy, view_seed)
            x = images_to_tensor(batch.views)
            z = head(encoder(x))
            loss = multi_positive_loss(z, batch.group, loss_config)

            for p in params:
                if p.grad is not None:
                    p.grad = None
            loss.backward()
            grads = [p.grad if p.grad is not None else torch.zeros_like(p) for p in params]
            sgd_step(params, grads, state, lr, config.momentum, config.weight_decay)
            rows.append(TraceRow(epoch=epoch, step=step, lr=lr, loss=float(loss.item())))

        last_epoch = epoch == config.epochs - 1
        if (epoch + 1) % config.checkpoint_every == 0 or last_epoch:
            path = ckpt_dir / f"epoch{epoch + 1:04d}.pt"
            save_checkpoint(path, encoder, head, meta={"epoch": epoch + 1, "seed": seed})
            checkpoint_paths.append(path)

    trace_path = out_dir / "trace.csv"
    write_trace(rows, trace_path)
    return PretrainResult(
        trace=rows,
        trace_path=trace_path,
        checkpoint_paths=checkpoint_paths,
        final_checkpoint=checkpoint_paths[-1],
    )
