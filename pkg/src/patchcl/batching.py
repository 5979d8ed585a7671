"""Multiview batch assembly and the index geometry it induces.

A batch holds C center groups of N neighbors each, so B = C * (N + 1) source
patches and 2B augmented views. The layout is fixed and closed-form, using
0-based indices:

  * first-view index of center c (0 <= c < C)           -> c
  * first-view index of the n-th neighbor of c (1 <= n) -> n * C + c
  * second view of any patch k                          -> k + B

Group labels therefore satisfy group(i) = (i mod B) mod C, and every index
map (positives, negatives, twin) is derived purely from group labels, never
from pixel content.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .augment import make_view
from .config import AugmentPolicy
from .corpus import PatchGroup
from .errors import BatchError

_MAX_NEARBY = 8


@dataclass(frozen=True)
class BatchSpec:
    """Shape of one multiview batch: C center groups, N neighbors per center."""

    centers: int
    nearby_count: int

    def __post_init__(self) -> None:
        if self.centers < 2:
            raise BatchError("need at least 2 center groups so negatives exist")
        if not 0 <= self.nearby_count <= _MAX_NEARBY:
            raise BatchError(f"nearby_count {self.nearby_count} outside [0, {_MAX_NEARBY}]")

    @property
    def samples_per_view(self) -> int:
        return self.centers * (self.nearby_count + 1)

    @property
    def total_views(self) -> int:
        return 2 * self.samples_per_view


def group_of(i: int, spec: BatchSpec) -> int:
    _check_index(i, spec)
    return (i % spec.samples_per_view) % spec.centers


def twin_index(i: int, spec: BatchSpec) -> int:
    """Index of the other augmented view of the same source patch."""
    _check_index(i, spec)
    b = spec.samples_per_view
    return i + b if i < b else i - b


def positive_indices(i: int, spec: BatchSpec) -> np.ndarray:
    """All views sharing i's group, excluding i itself; size 2N + 1."""
    _check_index(i, spec)
    g = group_of(i, spec)
    c, b = spec.centers, spec.samples_per_view
    members = [n * c + g + half for half in (0, b) for n in range(spec.nearby_count + 1)]
    return np.array(sorted(m for m in members if m != i), dtype=np.int64)


def negative_indices(i: int, spec: BatchSpec) -> np.ndarray:
    """All views outside i's group; size 2 (N + 1) (C - 1)."""
    _check_index(i, spec)
    g = group_of(i, spec)
    groups = batch_groups(spec)
    return np.flatnonzero(groups != g).astype(np.int64)


def batch_groups(spec: BatchSpec) -> np.ndarray:
    """Group label of every view index, length 2B."""
    b = spec.samples_per_view
    one_side = np.arange(b, dtype=np.int64) % spec.centers
    return np.concatenate([one_side, one_side])


def _check_index(i: int, spec: BatchSpec) -> None:
    if not 0 <= i < spec.total_views:
        raise BatchError(f"view index {i} outside [0, {spec.total_views})")


@dataclass
class MultiviewBatch:
    """2B augmented views with group labels and source-patch ids."""

    views: np.ndarray  # (2B, H, W, 3) float32
    group: np.ndarray  # (2B,) int64, values in [0, C)
    patch_id: np.ndarray  # (2B,) int64, each value appearing exactly twice
    spec: BatchSpec


def assemble(groups: Sequence[PatchGroup], policy: AugmentPolicy, seed: int) -> MultiviewBatch:
    """Augment every patch twice and lay views out per the fixed batch layout.

    Pure in (groups, policy, seed); per-view seeds are spawned from one seed
    sequence so any view is reproducible independently.
    """
    if len(groups) < 2:
        raise BatchError("need at least 2 groups per batch")
    nearby_count = len(groups[0].nearby)
    for g in groups:
        if len(g.nearby) != nearby_count:
            raise BatchError(
                f"ragged groups: expected {nearby_count} neighbors, "
                f"group {g.slide_id}/{g.group_id} has {len(g.nearby)}"
            )
    spec = BatchSpec(centers=len(groups), nearby_count=nearby_count)
    b = spec.samples_per_view

    patches: list[np.ndarray] = [None] * b  # type: ignore[list-item]
    for c, grp in enumerate(groups):
        patches[c] = grp.center
        for n, neighbor in enumerate(grp.nearby, start=1):
            patches[n * spec.centers + c] = neighbor

    children = np.random.SeedSequence(entropy=seed).spawn(2 * b)
    views = [make_view(patches[k % b], policy, children[k]) for k in range(2 * b)]

    patch_ids = np.concatenate([np.arange(b, dtype=np.int64)] * 2)
    return MultiviewBatch(
        views=np.stack(views),
        group=batch_groups(spec),
        patch_id=patch_ids,
        spec=spec,
    )
