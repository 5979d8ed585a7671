"""LR schedule, SGD semantics and the pretraining loop."""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from patchcl.config import AugmentPolicy, CorpusConfig, EncoderConfig, ProjectionConfig, TrainConfig
from patchcl.corpus import PatchGroup, extract_unlabeled_groups, generate_synthetic_slide
from patchcl.errors import ConfigError, DataError, NumericError
from patchcl.model import build_model
from patchcl.trainer import OptimizerState, lr_at, pretrain, scaled_lr, sgd_step

TINY_ENCODER = EncoderConfig(stage_channels=(8, 16), feature_dim=16)
TINY_PROJECTION = ProjectionConfig(hidden_dim=16, output_dim=8)


def reference_scale_config(nearby: int) -> TrainConfig:
    return TrainConfig(epochs=400, warmup_epochs=10, view_budget=512, nearby_count=nearby)


class TestScaledLR:
    def test_reference_budget_fixed_point_four(self):
        # 0.2 * 512 / 256 = 0.4, independent of the neighbor count.
        for nearby in (0, 1, 2, 4, 8):
            assert scaled_lr(reference_scale_config(nearby)) == pytest.approx(0.4, abs=1e-15)

    def test_pair_budget_256(self):
        cfg = TrainConfig(base_lr=0.1, view_budget=256, nearby_count=1, epochs=30)
        assert cfg.centers_per_batch == 128
        assert scaled_lr(cfg) == pytest.approx(0.1, abs=1e-15)

    def test_centers_derived_by_floor(self):
        assert reference_scale_config(0).centers_per_batch == 512
        assert reference_scale_config(1).centers_per_batch == 256
        assert reference_scale_config(2).centers_per_batch == 170
        assert reference_scale_config(4).centers_per_batch == 102
        assert reference_scale_config(8).centers_per_batch == 56


class TestSchedule:
    def test_warmup_values(self):
        cfg = reference_scale_config(0)
        assert lr_at(0, cfg) == pytest.approx(0.04)
        assert lr_at(4, cfg) == pytest.approx(0.2)
        assert lr_at(9, cfg) == pytest.approx(0.4)

    def test_peak_at_warmup_boundary(self):
        cfg = reference_scale_config(0)
        assert lr_at(10, cfg) == pytest.approx(scaled_lr(cfg), abs=1e-15)

    def test_continuous_at_boundary(self):
        cfg = reference_scale_config(0)
        assert abs(lr_at(10, cfg) - lr_at(9, cfg)) < 1e-12

    def test_final_epoch_near_zero(self):
        cfg = reference_scale_config(0)
        span = cfg.epochs - cfg.warmup_epochs
        expected = 0.4 * 0.5 * (1 + math.cos(math.pi * (cfg.epochs - 1 - 10) / span))
        value = lr_at(cfg.epochs - 1, cfg)
        assert value == pytest.approx(expected, abs=1e-15)
        assert value < 1e-4

    def test_nonincreasing_after_warmup(self):
        cfg = reference_scale_config(0)
        values = [lr_at(e, cfg) for e in range(cfg.warmup_epochs, cfg.epochs)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_epoch_out_of_range(self):
        cfg = reference_scale_config(0)
        with pytest.raises(ConfigError):
            lr_at(-1, cfg)
        with pytest.raises(ConfigError):
            lr_at(cfg.epochs, cfg)


class TestSgdStep:
    def test_plain_step(self):
        p = torch.tensor([1.0], dtype=torch.float64)
        state = OptimizerState.for_params([p])
        sgd_step([p], [torch.tensor([2.0], dtype=torch.float64)], state, lr=0.1, momentum=0.0, weight_decay=0.0)
        assert float(p) == pytest.approx(0.8, abs=1e-15)

    def test_two_step_momentum_recurrence(self):
        # v1 = 1 -> p1 = -0.1; v2 = 0.9 + 1 = 1.9 -> p2 = -0.29
        p = torch.tensor([0.0], dtype=torch.float64)
        g = torch.tensor([1.0], dtype=torch.float64)
        state = OptimizerState.for_params([p])
        sgd_step([p], [g], state, lr=0.1, momentum=0.9, weight_decay=0.0)
        assert float(p) == pytest.approx(-0.1, abs=1e-15)
        sgd_step([p], [g], state, lr=0.1, momentum=0.9, weight_decay=0.0)
        assert float(p) == pytest.approx(-0.29, abs=1e-15)

    def test_weight_decay_pure_shrink(self):
        p = torch.tensor([2.0], dtype=torch.float64)
        state = OptimizerState.for_params([p])
        sgd_step([p], [torch.zeros(1, dtype=torch.float64)], state, lr=0.5, momentum=0.0, weight_decay=1e-4)
        assert float(p) == pytest.approx(2.0 * (1 - 0.5 * 1e-4), abs=1e-15)

    def test_zero_gradient_zero_decay_noop(self):
        p = torch.tensor([1.5, -2.0])
        before = p.clone()
        state = OptimizerState.for_params([p])
        sgd_step([p], [torch.zeros(2)], state, lr=0.3, momentum=0.9, weight_decay=0.0)
        torch.testing.assert_close(p, before)

    def test_nonfinite_gradient_aborts(self):
        p = torch.tensor([1.0])
        before = p.clone()
        state = OptimizerState.for_params([p])
        with pytest.raises(NumericError, match="non-finite"):
            sgd_step([p], [torch.tensor([float("nan")])], state, 0.1, 0.9, 0.0)
        torch.testing.assert_close(p, before)

    def test_shape_mismatch_rejected(self):
        p = torch.zeros(3)
        state = OptimizerState.for_params([p])
        with pytest.raises(NumericError):
            sgd_step([p], [torch.zeros(2)], state, 0.1, 0.0, 0.0)


@pytest.fixture(scope="module")
def toy_groups():
    cfg = CorpusConfig(
        unlabeled_slides=1,
        slide_size=256,
        patch_size=32,
        num_classes=4,
        patches_per_slide=64,
        nearby_counts=(1,),
    )
    slide = generate_synthetic_slide(cfg, seed=21)
    records = extract_unlabeled_groups(slide, nearby_count=1, count=64, patch_size=32, seed=3)
    groups: dict[int, dict] = {}
    for rec in records:
        groups.setdefault(rec.group_id, {"center": None, "nearby": []})
        from patchcl.corpus import crop_patch

        patch = crop_patch(slide, rec.x, rec.y, rec.size)
        if rec.role == "center":
            groups[rec.group_id]["center"] = patch
        else:
            groups[rec.group_id]["nearby"].append(patch)
    return [
        PatchGroup("toy", gid, parts["center"], parts["nearby"]) for gid, parts in groups.items()
    ]


def smoke_config(**overrides) -> TrainConfig:
    base = dict(epochs=2, warmup_epochs=1, view_budget=16, nearby_count=1, checkpoint_every=1)
    base.update(overrides)
    return TrainConfig(**base)


class TestPretrain:
    def test_smoke_run_loss_decreases(self, toy_groups, tmp_path):
        encoder, head = build_model(TINY_ENCODER, TINY_PROJECTION, seed=1)
        cfg = smoke_config(epochs=4)
        result = pretrain(toy_groups, encoder, head, cfg, AugmentPolicy(target_size=16), tmp_path / "r", 5)
        losses = [row.loss for row in result.trace]
        steps_per_epoch = len(toy_groups) // cfg.centers_per_batch
        assert len(losses) == cfg.epochs * steps_per_epoch
        head_mean = float(np.mean(losses[:steps_per_epoch]))
        tail_mean = float(np.mean(losses[-steps_per_epoch:]))
        assert tail_mean < head_mean

    def test_rerun_bit_identical(self, toy_groups, tmp_path):
        traces = []
        for run in ("a", "b"):
            encoder, head = build_model(TINY_ENCODER, TINY_PROJECTION, seed=1)
            result = pretrain(
                toy_groups, encoder, head, smoke_config(), AugmentPolicy(target_size=16), tmp_path / run, 5
            )
            traces.append(result.trace_path.read_bytes())
        assert traces[0] == traces[1]

    def test_checkpoints_written(self, toy_groups, tmp_path):
        encoder, head = build_model(TINY_ENCODER, TINY_PROJECTION, seed=1)
        result = pretrain(
            toy_groups, encoder, head, smoke_config(checkpoint_every=1), AugmentPolicy(target_size=16), tmp_path / "c", 5
        )
        assert [p.name for p in result.checkpoint_paths] == ["epoch0001.pt", "epoch0002.pt"]
        assert result.final_checkpoint.exists()

    def test_nearby_mismatch_rejected(self, toy_groups, tmp_path):
        encoder, head = build_model(TINY_ENCODER, TINY_PROJECTION, seed=1)
        cfg = smoke_config(nearby_count=4, view_budget=20)
        with pytest.raises(DataError, match="neighbors"):
            pretrain(toy_groups, encoder, head, cfg, AugmentPolicy(target_size=16), tmp_path / "m", 5)

    def test_larger_manifest_trimmed_deterministically(self, toy_groups, tmp_path):
        cfg = smoke_config(nearby_count=0, view_budget=8)
        results = []
        for run in ("t1", "t2"):
            encoder, head = build_model(TINY_ENCODER, TINY_PROJECTION, seed=1)
            result = pretrain(toy_groups, encoder, head, cfg, AugmentPolicy(target_size=16), tmp_path / run, 5)
            results.append(result.trace_path.read_bytes())
        assert results[0] == results[1]

    def test_too_few_groups_rejected(self, toy_groups, tmp_path):
        encoder, head = build_model(TINY_ENCODER, TINY_PROJECTION, seed=1)
        cfg = smoke_config(view_budget=512, nearby_count=1)
        with pytest.raises(DataError, match="groups"):
            pretrain(toy_groups[:10], encoder, head, cfg, AugmentPolicy(target_size=16), tmp_path / "few", 5)
