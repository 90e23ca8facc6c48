"""Planted-needle construction and the drifting-query generator."""

import numpy as np
import pytest

from sparseprefill.attn_core import ConfigError
from sparseprefill.partition import block_bounds, num_blocks, segment_bounds, num_segments
from sparseprefill.pruned_attn import PrunedAttnConfig
from sparseprefill.rng import RngSpec, SplitMix64
from sparseprefill.synth import (
    build_needle,
    drifting_queries,
    iid_matrix,
    needle_verdict,
)

CFG = PrunedAttnConfig(segment_size=64, block_size=16, budget=128)


class TestBuildNeedle:
    def test_construction_properties(self):
        n, d = 512, 12
        q, keys, planted = build_needle(n, d, CFG, 0.3, 10.0, SplitMix64(0))
        b0, b1 = block_bounds(planted, CFG.block_size, n)
        rows = keys[b0:b1]
        # the planted rows are a common direction scaled to magnitude 10
        norms = np.linalg.norm(rows, axis=1)
        assert np.allclose(norms, 10.0, atol=1e-9)
        assert np.allclose(rows, rows[0], atol=1e-12)
        u = rows[0] / 10.0
        # background keys orthogonal to the planted direction
        background = np.delete(keys, np.arange(b0, b1), axis=0)
        assert np.abs(background @ u).max() < 1e-10
        # final query segment aligned with it
        seg_start, _ = segment_bounds(
            num_segments(n, CFG.segment_size) - 1, CFG.segment_size, n
        )
        assert np.allclose(q[seg_start:], u, atol=1e-12)

    def test_depth_beyond_block_axis_rejected(self):
        with pytest.raises(ConfigError):
            build_needle(256, 8, CFG, 1.5, 10.0, SplitMix64(1))

    def test_depth_one_lands_on_last_block(self):
        n = 512
        _, _, planted = build_needle(n, 8, CFG, 1.0, 10.0, SplitMix64(2))
        assert planted == num_blocks(n, CFG.block_size) - 1


class TestNeedleVerdict:
    @pytest.mark.parametrize("depth", [0.1, 0.5, 0.9])
    def test_planted_block_found_at_all_depths(self, depth):
        case = needle_verdict(2048, 16, CFG, depth, 10.0, RngSpec(0))
        assert case.found
        assert case.score_margin > 0

    def test_zero_magnitude_permits_not_found(self):
        case = needle_verdict(2048, 16, CFG, 0.2, 0.0, RngSpec(0))
        assert isinstance(case.found, bool)  # either verdict is legitimate

    def test_everything_selected_under_huge_budget(self):
        wide = PrunedAttnConfig(segment_size=64, block_size=16, budget=4096)
        case = needle_verdict(2048, 16, wide, 0.05, 0.0, RngSpec(1))
        assert case.found  # selection covers every eligible block

    def test_deep_plant_overlapping_final_segment_is_diagonal(self):
        case = needle_verdict(512, 8, CFG, 1.0, 10.0, RngSpec(2))
        assert case.forced_diagonal
        assert case.found


class TestDriftingQueries:
    def test_shape_and_determinism(self):
        a = drifting_queries(128, 16, SplitMix64(3), 0.01)
        b = drifting_queries(128, 16, SplitMix64(3), 0.01)
        assert a.shape == (128, 16)
        assert np.array_equal(a, b)

    def test_adjacent_rows_nearly_parallel(self):
        q = drifting_queries(1024, 32, SplitMix64(4), 0.005)
        unit = q / np.linalg.norm(q, axis=1, keepdims=True)
        adjacent_cos = (unit[:-1] * unit[1:]).sum(axis=1)
        far_cos = float(unit[0] @ unit[-1])
        assert adjacent_cos.min() > 0.99
        assert far_cos < adjacent_cos.min()

    def test_iid_matrix_is_plain_normals(self):
        m = iid_matrix(64, 8, SplitMix64(5))
        assert np.array_equal(m, SplitMix64(5).normal_matrix(64, 8))
