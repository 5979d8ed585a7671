"""Classification-map rendering: palette, grid geometry and accuracy sidecar."""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image

from patchcl.config import EncoderConfig, EvalTransform, ProjectionConfig
from patchcl.maps import (
    CLASS_PALETTE,
    grid_from_colors,
    mask_to_grid,
    palette_color,
    render_class_grid,
    render_map,
)
from patchcl.model import LinearClassifier, build_model


class TestPalette:
    def test_roundtrip(self):
        grid = np.array([[0, 1, 2], [3, 4, 5]])
        image = render_class_grid(grid)
        np.testing.assert_array_equal(grid_from_colors(image, 6), grid)

    def test_palette_distinct(self):
        assert len(set(CLASS_PALETTE)) == len(CLASS_PALETTE)

    def test_fallback_colors_deterministic(self):
        assert palette_color(42) == palette_color(42)


class TestGrids:
    def test_mask_to_grid_majority(self):
        mask = np.zeros((8, 8), dtype=np.uint8)
        mask[0:4, 4:8] = 1  # entire top-right tile
        mask[4, 0] = 1  # single pixel in bottom-left tile: majority stays 0
        grid = mask_to_grid(mask, 4)
        np.testing.assert_array_equal(grid, [[0, 1], [0, 0]])

    def test_rendered_grid_dimensions(self):
        grid = np.zeros((3, 5), dtype=np.int64)
        assert render_class_grid(grid).shape == (3, 5, 3)


class TestVoting:
    def test_majority_vote_tie_breaks_low(self, tiny_slide):
        from patchcl.maps import classify_slide_grid

        encoder, _ = build_model(
            EncoderConfig(stage_channels=(8, 16), feature_dim=16),
            ProjectionConfig(hidden_dim=None, output_dim=8),
            seed=0,
        )
        # Classifiers forced to constant classes: votes 2 vs 2 vs 1 between
        # classes {2, 1, 0}; a 2-2 tie resolves to the lower class id 1.
        def constant(cls: int) -> LinearClassifier:
            clf = LinearClassifier(16, 6)
            with torch.no_grad():
                clf.linear.weight.zero_()
                clf.linear.bias.zero_()
                clf.linear.bias[cls] = 1.0
            return clf

        classifiers = [constant(2), constant(2), constant(1), constant(1), constant(0)]
        transform = EvalTransform(resize_size=32, crop_size=28)
        grid = classify_slide_grid(tiny_slide, 32, encoder, classifiers, transform)
        assert (grid == 1).all()


class TestRenderMap:
    def test_outputs_and_accuracy(self, tiny_slide, tmp_path):
        encoder, _ = build_model(
            EncoderConfig(stage_channels=(8, 16), feature_dim=16),
            ProjectionConfig(hidden_dim=None, output_dim=8),
            seed=0,
        )
        classifiers = [LinearClassifier(16, 6) for _ in range(3)]
        for clf in classifiers:
            with torch.no_grad():
                clf.linear.weight.zero_()
                clf.linear.bias.zero_()
        transform = EvalTransform(resize_size=32, crop_size=28)
        accuracy = render_map(
            tiny_slide, 32, encoder, classifiers, transform, tmp_path, num_classes=6
        )
        grid_side = tiny_slide.width // 32
        overlay = np.asarray(Image.open(tmp_path / "fixture_overlay.png"))
        assert overlay.shape == (grid_side, grid_side, 3)
        truth = np.asarray(Image.open(tmp_path / "fixture_truth.png"))
        assert truth.shape == (grid_side, grid_side, 3)
        # Zeroed classifiers predict class 0 everywhere; accuracy = share of
        # tiles whose mask majority is 0.
        truth_grid = mask_to_grid(tiny_slide.mask, 32)
        assert accuracy == (truth_grid == 0).mean()
        sidecar = (tmp_path / "fixture_accuracy.txt").read_text()
        assert f"{accuracy:.4f}" in sidecar
        legend = (tmp_path / "legend.txt").read_text().splitlines()
        assert len(legend) == 6
        assert legend[0].startswith("0\t#")
