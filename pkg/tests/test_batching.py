"""Batch layout and index-set geometry."""

from __future__ import annotations

import numpy as np
import pytest

from patchcl.batching import (
    BatchSpec,
    MultiviewBatch,
    assemble,
    batch_groups,
    group_of,
    negative_indices,
    positive_indices,
    twin_index,
)
from patchcl.config import AugmentPolicy
from patchcl.corpus import PatchGroup
from patchcl.errors import BatchError


def make_groups(centers: int, nearby: int, side: int = 12, seed: int = 0) -> list[PatchGroup]:
    rng = np.random.default_rng(seed)
    groups = []
    for c in range(centers):
        center = rng.random((side, side, 3)).astype(np.float32)
        neighbors = [rng.random((side, side, 3)).astype(np.float32) for _ in range(nearby)]
        groups.append(PatchGroup("s", c, center, neighbors))
    return groups


class TestSpec:
    def test_counts(self):
        spec = BatchSpec(4, 2)
        assert spec.samples_per_view == 12
        assert spec.total_views == 24

    def test_single_center_rejected(self):
        with pytest.raises(BatchError):
            BatchSpec(1, 2)

    def test_nearby_bounds(self):
        with pytest.raises(BatchError):
            BatchSpec(2, 9)


class TestIndexGeometry:
    def test_two_centers_one_nearby_layout(self):
        # 8 views; group pattern alternates center ids on both halves.
        spec = BatchSpec(2, 1)
        assert batch_groups(spec).tolist() == [0, 1, 0, 1, 0, 1, 0, 1]
        assert positive_indices(0, spec).tolist() == [2, 4, 6]
        assert negative_indices(0, spec).tolist() == [1, 3, 5, 7]
        assert twin_index(0, spec) == 4

    def test_three_centers_pair_batch(self):
        spec = BatchSpec(3, 0)
        assert spec.total_views == 6
        p0 = positive_indices(0, spec)
        assert p0.tolist() == [3]
        assert twin_index(0, spec) == 3
        assert len(negative_indices(0, spec)) == 4

    def test_group_size_multiset(self):
        for centers, nearby in [(2, 1), (3, 0), (4, 3), (5, 8)]:
            spec = BatchSpec(centers, nearby)
            groups = batch_groups(spec)
            sizes = sorted(np.bincount(groups).tolist())
            assert sizes == [2 * (nearby + 1)] * centers

    @pytest.mark.parametrize("centers", range(2, 7))
    @pytest.mark.parametrize("nearby", range(0, 9))
    def test_partition_symmetry_counts(self, centers, nearby):
        spec = BatchSpec(centers, nearby)
        total = spec.total_views
        for i in range(total):
            p = positive_indices(i, spec)
            a = negative_indices(i, spec)
            assert len(p) == 2 * nearby + 1
            assert len(a) == 2 * (nearby + 1) * (centers - 1)
            union = set(p.tolist()) | set(a.tolist()) | {i}
            assert union == set(range(total))
            assert len(p) + len(a) + 1 == total
            assert twin_index(i, spec) in p
            for j in p:
                assert i in positive_indices(int(j), spec)

    def test_positive_sets_depend_only_on_labels(self):
        spec = BatchSpec(3, 1)
        groups = batch_groups(spec)
        for i in range(spec.total_views):
            expected = np.flatnonzero(groups == groups[i])
            expected = expected[expected != i]
            np.testing.assert_array_equal(positive_indices(i, spec), expected)

    def test_index_bounds_checked(self):
        spec = BatchSpec(2, 0)
        with pytest.raises(BatchError):
            group_of(4, spec)
        with pytest.raises(BatchError):
            positive_indices(-1, spec)


class TestAssemble:
    def test_layout_and_metadata(self):
        policy = AugmentPolicy(target_size=8)
        batch = assemble(make_groups(2, 1), policy, seed=3)
        assert isinstance(batch, MultiviewBatch)
        assert batch.views.shape == (8, 8, 8, 3)
        assert batch.group.tolist() == [0, 1, 0, 1, 0, 1, 0, 1]
        counts = np.bincount(batch.patch_id)
        assert counts.tolist() == [2, 2, 2, 2]

    def test_deterministic(self):
        policy = AugmentPolicy(target_size=8)
        groups = make_groups(3, 2)
        a = assemble(groups, policy, seed=42)
        b = assemble(groups, policy, seed=42)
        np.testing.assert_array_equal(a.views, b.views)

    def test_two_views_of_same_patch_differ(self):
        policy = AugmentPolicy(target_size=8)
        batch = assemble(make_groups(4, 0, side=16), policy, seed=9)
        b = batch.spec.samples_per_view
        differing = sum(
            not np.array_equal(batch.views[k], batch.views[k + b]) for k in range(b)
        )
        assert differing >= b - 1

    def test_ragged_groups_rejected(self):
        groups = make_groups(3, 2)
        groups[1] = PatchGroup("s", 1, groups[1].center, groups[1].nearby[:1])
        with pytest.raises(BatchError):
            assemble(groups, AugmentPolicy(target_size=8), seed=0)

    def test_too_few_groups_rejected(self):
        with pytest.raises(BatchError):
            assemble(make_groups(2, 1)[:1], AugmentPolicy(target_size=8), seed=0)
