from __future__ import annotations

import numpy as np
import pytest

from patchcl.config import CorpusConfig
from patchcl.corpus import SlideImage, generate_synthetic_slide


@pytest.fixture(scope="session")
def tiny_corpus_config() -> CorpusConfig:
    return CorpusConfig(
        unlabeled_slides=2,
        train_slides=1,
        test_slides=1,
        slide_size=256,
        patch_size=32,
        num_classes=6,
        patches_per_slide=40,
        nearby_counts=(0, 2),
    )


@pytest.fixture(scope="session")
def tiny_slide(tiny_corpus_config) -> SlideImage:
    return generate_synthetic_slide(tiny_corpus_config, seed=7, slide_id="fixture")


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def make_striped_slide(size: int = 96, num_classes: int = 2) -> SlideImage:
    """Hand-built slide whose mask splits vertically at 60% of the width."""
    mask = np.zeros((size, size), dtype=np.uint8)
    cut = int(size * 0.6)
    mask[:, cut:] = 1 % num_classes
    pixels = np.zeros((size, size, 3), dtype=np.float32)
    pixels[mask == 0] = (0.9, 0.9, 0.9)
    pixels[mask == 1] = (0.2, 0.4, 0.6)
    return SlideImage(slide_id="striped", pixels=pixels, mask=mask)
