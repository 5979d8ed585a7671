"""Class-map rendering: tile a slide, classify each tile, paint a color grid.

The overlay has one pixel per grid tile (slide side / patch size). Tiles are
classified by majority vote over the fold classifiers, with ties broken
toward the lowest class id; the ground-truth grid uses per-tile mask majority
so the two renderings are directly comparable.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .config import EvalTransform
from .corpus import SlideImage, majority_label
from .errors import DataError
from .lineval import extract_features, predict
from .model import ConvEncoder, LinearClassifier

# Fixed rendering palette; index = class id. Distinct, collision-free colors.
CLASS_PALETTE: tuple[tuple[int, int, int], ...] = (
    (230, 230, 230),  # 0 background
    (204, 51, 51),    # 1
    (51, 102, 204),   # 2
    (51, 170, 85),    # 3
    (238, 170, 34),   # 4
    (153, 68, 187),   # 5
)


def palette_color(class_id: int) -> tuple[int, int, int]:
    if class_id < len(CLASS_PALETTE):
        return CLASS_PALETTE[class_id]
    # Deterministic fallback for configs with more classes than palette entries.
    rng = np.random.default_rng(class_id)
    return tuple(int(v) for v in rng.integers(40, 216, size=3))


def render_class_grid(grid: np.ndarray) -> np.ndarray:
    """Class-id grid -> uint8 RGB image of identical dimensions."""
    out = np.zeros((*grid.shape, 3), dtype=np.uint8)
    for cls in np.unique(grid):
        out[grid == cls] = palette_color(int(cls))
    return out


def grid_from_colors(image: np.ndarray, num_classes: int) -> np.ndarray:
    """Invert ``render_class_grid`` for palette-rendered images."""
    grid = np.full(image.shape[:2], -1, dtype=np.int64)
    for cls in range(num_classes):
        match = (image == np.array(palette_color(cls), dtype=np.uint8)).all(axis=2)
        grid[match] = cls
    if (grid < 0).any():
        raise DataError("image contains colors outside the class palette")
    return grid


def mask_to_grid(mask: np.ndarray, patch_size: int) -> np.ndarray:
    """Per-tile majority class of a pixel mask."""
    h, w = mask.shape
    gh, gw = h // patch_size, w // patch_size
    grid = np.zeros((gh, gw), dtype=np.int64)
    num_classes = int(mask.max()) + 1
    for gy in range(gh):
        for gx in range(gw):
            tile = mask[gy * patch_size : (gy + 1) * patch_size, gx * patch_size : (gx + 1) * patch_size]
            grid[gy, gx] = majority_label(tile, num_classes)
    return grid


def classify_slide_grid(
    slide: SlideImage,
    patch_size: int,
    encoder: ConvEncoder,
    classifiers: Sequence[LinearClassifier],
    transform: EvalTransform,
) -> np.ndarray:
    """Majority-vote class per non-overlapping tile (stride = patch size)."""
    gh = slide.height // patch_size
    gw = slide.width // patch_size
    tiles = [
        slide.pixels[gy * patch_size : (gy + 1) * patch_size, gx * patch_size : (gx + 1) * patch_size]
        for gy in range(gh)
        for gx in range(gw)
    ]
    features = extract_features(encoder, tiles, transform)
    votes = np.stack([predict(clf, features) for clf in classifiers])  # (folds, tiles)
    grid = np.zeros(len(tiles), dtype=np.int64)
    num_classes = int(votes.max()) + 1
    for t in range(len(tiles)):
        counts = np.bincount(votes[:, t], minlength=num_classes)
        grid[t] = counts.argmax()  # ties resolve to the lowest class id
    return grid.reshape(gh, gw)


def render_map(
    slide: SlideImage,
    patch_size: int,
    encoder: ConvEncoder,
    classifiers: Sequence[LinearClassifier],
    transform: EvalTransform,
    out_dir: str | Path,
    num_classes: int,
) -> float:
    """Write overlay, ground-truth rendering, legend and accuracy sidecar.

    Returns the fraction of tiles whose predicted class matches the mask
    majority class.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pred_grid = classify_slide_grid(slide, patch_size, encoder, classifiers, transform)
    true_grid = mask_to_grid(slide.mask, patch_size)
    if pred_grid.shape != true_grid.shape:
        raise DataError("prediction grid and mask grid dimensions differ")

    Image.fromarray(render_class_grid(pred_grid), mode="RGB").save(
        out_dir / f"{slide.slide_id}_overlay.png", format="PNG"
    )
    Image.fromarray(render_class_grid(true_grid), mode="RGB").save(
        out_dir / f"{slide.slide_id}_truth.png", format="PNG"
    )

    legend_lines = [
        f"{cls}\t#{palette_color(cls)[0]:02x}{palette_color(cls)[1]:02x}{palette_color(cls)[2]:02x}"
        for cls in range(num_classes)
    ]
    (out_dir / "legend.txt").write_text("\n".join(legend_lines) + "\n")

    accuracy = float((pred_grid == true_grid).mean())
    (out_dir / f"{slide.slide_id}_accuracy.txt").write_text(
        f"tiles: {pred_grid.size}\n"
        f"matching: {int((pred_grid == true_grid).sum())}\n"
        f"pixel_accuracy: {accuracy:.4f}\n"
    )
    return accuracy
