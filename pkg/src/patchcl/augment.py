"""Stochastic view generation for pretraining and the deterministic eval transform.

``make_view`` is a pure function of (patch, policy, seed): crop window, flip,
jitter factors and grayscale gate are all drawn from one seeded generator in a
fixed order, so identical seeds reproduce identical views bit for bit.
"""

from __future__ import annotations

import math

import cv2
import numpy as np

from .config import AugmentPolicy, EvalTransform
from .errors import AugmentError

_ASPECT_RANGE = (3.0 / 4.0, 4.0 / 3.0)
_CROP_TRIES = 10

# ITU-R 601 luma weights, matching the common image-library convention.
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


def sample_crop_window(
    rng: np.random.Generator,
    side: int,
    scale_range: tuple[float, float],
    max_tries: int = _CROP_TRIES,
) -> tuple[int, int, int, int]:
    """Draw an (x, y, w, h) crop window with random area scale and aspect ratio.

    Proposals whose dimensions fall outside the patch are redrawn; after
    ``max_tries`` failures the window is considered degenerate.
    """
    area = float(side * side)
    log_lo, log_hi = math.log(_ASPECT_RANGE[0]), math.log(_ASPECT_RANGE[1])
    for _ in range(max_tries):
        scale = rng.uniform(scale_range[0], scale_range[1])
        aspect = math.exp(rng.uniform(log_lo, log_hi))
        w = int(round(math.sqrt(area * scale * aspect)))
        h = int(round(math.sqrt(area * scale / aspect)))
        if 1 <= w <= side and 1 <= h <= side:
            x = int(rng.integers(0, side - w + 1))
            y = int(rng.integers(0, side - h + 1))
            return x, y, w, h
    raise AugmentError(f"no valid crop window after {max_tries} attempts")


def _grayscale(img: np.ndarray) -> np.ndarray:
    luma = img @ _LUMA
    return np.repeat(luma[..., None], 3, axis=2)


def _adjust_brightness(img: np.ndarray, factor: float) -> np.ndarray:
    return img * factor


def _adjust_contrast(img: np.ndarray, factor: float) -> np.ndarray:
    mean = float((img @ _LUMA).mean())
    return img * factor + mean * (1.0 - factor)


def _adjust_saturation(img: np.ndarray, factor: float) -> np.ndarray:
    return img * factor + _grayscale(img) * (1.0 - factor)


def make_view(patch: np.ndarray, policy: AugmentPolicy, seed) -> np.ndarray:
    """One stochastic view: crop -> flip -> jitter -> grayscale -> resize.

    ``seed`` may be an int or a numpy SeedSequence. Output is a float32
    (target, target, 3) array clamped to [0, 1].
    """
    if patch.ndim != 3 or patch.shape[2] != 3 or patch.shape[0] != patch.shape[1]:
        raise AugmentError(f"expected a square HxWx3 patch, got shape {patch.shape}")
    side = patch.shape[0]
    if side < 1:
        raise AugmentError("empty patch")
    rng = np.random.default_rng(seed)

    x, y, w, h = sample_crop_window(rng, side, policy.crop_scale)
    view = patch[y : y + h, x : x + w].astype(np.float32)

    if rng.random() < policy.flip_prob:
        view = view[:, ::-1]

    if rng.random() < policy.jitter_prob:
        b, c, s = policy.jitter
        view = _adjust_brightness(view, rng.uniform(max(0.0, 1.0 - b), 1.0 + b))
        view = _adjust_contrast(view, rng.uniform(max(0.0, 1.0 - c), 1.0 + c))
        view = _adjust_saturation(view, rng.uniform(max(0.0, 1.0 - s), 1.0 + s))

    if rng.random() < policy.grayscale_prob:
        view = _grayscale(view)

    view = cv2.resize(
        np.ascontiguousarray(view),
        (policy.target_size, policy.target_size),
        interpolation=cv2.INTER_LINEAR,
    )
    return np.clip(view, 0.0, 1.0, out=view)


def eval_view(patch: np.ndarray, transform: EvalTransform) -> np.ndarray:
    """Deterministic resize -> center crop -> per-channel normalization."""
    if patch.ndim != 3 or patch.shape[2] != 3 or patch.shape[0] != patch.shape[1]:
        raise AugmentError(f"expected a square HxWx3 patch, got shape {patch.shape}")
    resized = cv2.resize(
        np.ascontiguousarray(patch.astype(np.float32)),
        (transform.resize_size, transform.resize_size),
        interpolation=cv2.INTER_LINEAR,
    )
    off = (transform.resize_size - transform.crop_size) // 2
    crop = resized[off : off + transform.crop_size, off : off + transform.crop_size]
    mean = np.asarray(transform.mean, dtype=np.float32)
    std = np.asarray(transform.std, dtype=np.float32)
    return (crop - mean) / std
