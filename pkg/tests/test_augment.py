"""View augmentation determinism, geometry and value bounds."""

from __future__ import annotations

import numpy as np
import pytest

from patchcl.augment import eval_view, make_view, sample_crop_window
from patchcl.config import AugmentPolicy, EvalTransform
from patchcl.errors import AugmentError


def random_patch(rng, side=64):
    return rng.random((side, side, 3)).astype(np.float32)


class TestMakeView:
    def test_same_seed_identical(self, rng):
        patch = random_patch(rng)
        policy = AugmentPolicy(target_size=32)
        a = make_view(patch, policy, 77)
        b = make_view(patch, policy, 77)
        np.testing.assert_array_equal(a, b)

    def test_default_output_is_128(self, rng):
        view = make_view(random_patch(rng, 256), AugmentPolicy(), 0)
        assert view.shape == (128, 128, 3)

    def test_configured_output_size(self, rng):
        view = make_view(random_patch(rng), AugmentPolicy(target_size=32), 0)
        assert view.shape == (32, 32, 3)
        assert view.dtype == np.float32

    def test_double_flip_restores_crop(self, rng):
        crop = random_patch(rng, 40)
        np.testing.assert_array_equal(crop[:, ::-1][:, ::-1], crop)

    def test_independent_seeds_differ(self, rng):
        policy = AugmentPolicy(target_size=32)
        differing = 0
        for trial in range(100):
            patch = random_patch(rng)
            a = make_view(patch, policy, 2 * trial)
            b = make_view(patch, policy, 2 * trial + 1)
            if not np.array_equal(a, b):
                differing += 1
        assert differing >= 99

    def test_values_clamped(self, rng):
        policy = AugmentPolicy(target_size=32, jitter=(0.9, 0.9, 0.9), jitter_prob=1.0)
        for seed in range(20):
            view = make_view(random_patch(rng), policy, seed)
            assert view.min() >= 0.0
            assert view.max() <= 1.0

    def test_non_square_rejected(self, rng):
        with pytest.raises(AugmentError):
            make_view(rng.random((32, 48, 3)).astype(np.float32), AugmentPolicy(), 0)

    def test_tiny_patch_still_works(self):
        patch = np.full((1, 1, 3), 0.5, dtype=np.float32)
        view = make_view(patch, AugmentPolicy(target_size=8, crop_scale=(1.0, 1.0)), 0)
        assert view.shape == (8, 8, 3)


class TestCropWindow:
    def test_window_inside_patch(self, rng):
        for _ in range(200):
            x, y, w, h = sample_crop_window(rng, 64, (0.2, 1.0))
            assert 0 <= x and x + w <= 64
            assert 0 <= y and y + h <= 64
            assert w >= 1 and h >= 1

    def test_degenerate_window_errors_after_retries(self):
        class AlwaysTooWide:
            # maximal scale and aspect every draw -> width always exceeds the patch
            def uniform(self, lo, hi):
                return hi

            def integers(self, lo, hi):
                return lo

        with pytest.raises(AugmentError, match="attempts"):
            sample_crop_window(AlwaysTooWide(), 64, (1.0, 1.0))


class TestEvalView:
    def test_constant_image_zeroes_out(self):
        patch = np.full((64, 64, 3), 0.37, dtype=np.float32)
        t = EvalTransform(resize_size=32, crop_size=28, mean=(0.37, 0.37, 0.37), std=(1, 1, 1))
        out = eval_view(patch, t)
        np.testing.assert_allclose(out, 0.0, atol=1e-6)

    def test_center_crop_offset(self):
        # 256 -> 224 leaves 16 pixels on each side.
        patch = np.zeros((256, 256, 3), dtype=np.float32)
        patch[16 : 16 + 224, 16 : 16 + 224] = 1.0
        t = EvalTransform(resize_size=256, crop_size=224, mean=(0, 0, 0), std=(1, 1, 1))
        out = eval_view(patch, t)
        assert out.shape == (224, 224, 3)
        np.testing.assert_allclose(out, 1.0, atol=1e-6)

    def test_deterministic(self, rng):
        patch = random_patch(rng, 96)
        t = EvalTransform(resize_size=64, crop_size=56)
        np.testing.assert_array_equal(eval_view(patch, t), eval_view(patch, t))

    def test_normalization_applied(self):
        patch = np.full((32, 32, 3), 0.75, dtype=np.float32)
        t = EvalTransform(resize_size=32, crop_size=32, mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5))
        np.testing.assert_allclose(eval_view(patch, t), 0.5, atol=1e-6)
