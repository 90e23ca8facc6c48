"""Closed-form FLOP accounting, pinned against independent arithmetic."""

import pytest

from sparseprefill.attn_core import ConfigError, HeadGeometry
from sparseprefill.flops import (
    count_flops,
    dense_attention_flops_per_head,
    gathered_tokens,
    pruned_attention_flops_per_head,
)
from sparseprefill.partition import num_segments
from sparseprefill.pruned_attn import PrunedAttnConfig


def independent_tally(n, layers, heads, d, seg, blk, budget):
    """Re-derivation of the closed forms with none of the library helpers.

    Everything is spelled out from the token ranges directly, so a slip
    in the partition helpers cannot cancel out of the comparison.
    """
    dense_head = 4 * d * sum(range(1, n + 1))

    budget_blocks = budget // blk if budget // blk > 0 else 1
    n_blocks = (n + blk - 1) // blk
    pruned_head = 0
    j = 0
    while j * seg < n:
        first_tok = j * seg
        last_tok = min((j + 1) * seg, n) - 1
        seg_tokens = last_tok - first_tok + 1
        first_diag = first_tok // blk
        last_diag = last_tok // blk
        eligible = last_diag + 1
        n_sel = min(budget_blocks, eligible)
        if n_sel < last_diag - first_diag + 1:
            n_sel = last_diag - first_diag + 1
        toks = n_sel * blk
        if last_diag == n_blocks - 1:
            toks -= n_blocks * blk - n  # tail block is short
        pruned_head += 4 * d * seg_tokens * toks
        j += 1

    n1 = (n + seg - 1) // seg
    n2 = n_blocks
    overhead_head = 2 * n * d * 2 + 4 * (2 * d * n1 * n2) + 5 * n1 * n2
    return (
        layers * heads * dense_head,
        layers * heads * pruned_head,
        layers * heads * overhead_head,
    )


def test_smallest_dense_case_is_twelve():
    geom = HeadGeometry(n_heads=1, head_dim=1)
    cfg = PrunedAttnConfig(segment_size=1, block_size=1, budget=1)
    report = count_flops(2, 1, geom, cfg, mode="dense")
    assert report.dense == 12  # 2 * d * n * (n+1) at n=2, d=1


def test_degenerate_single_block_geometry():
    # One segment over one block covering all tokens: at n=1 the pruned
    # rectangle equals the dense triangle exactly; for larger n the two
    # differ by the triangle/rectangle identity 2*dense - 4*d*n.
    d = 4
    cfg1 = PrunedAttnConfig(segment_size=1, block_size=1, budget=1)
    assert pruned_attention_flops_per_head(1, d, cfg1) == dense_attention_flops_per_head(1, d)

    n = 16
    cfg = PrunedAttnConfig(segment_size=n, block_size=n, budget=n)
    pruned = pruned_attention_flops_per_head(n, d, cfg)
    dense = dense_attention_flops_per_head(n, d)
    assert pruned == 4 * d * n * n
    assert pruned == 2 * dense - 4 * d * n


def test_matches_independent_arithmetic_at_reference_settings():
    geom = HeadGeometry(n_heads=1, head_dim=64)
    cfg = PrunedAttnConfig()  # 512 / 32 / 1024
    for n in (16384, 32768, 65536, 131072):
        report = count_flops(n, 1, geom, cfg, mode="pruned")
        dense, pruned, overhead = independent_tally(
            n, 1, 1, 64, 512, 32, 1024
        )
        assert report.dense == dense
        assert report.pruned == pruned
        assert report.overhead == overhead


def test_ratio_strictly_increases_with_n():
    geom = HeadGeometry(n_heads=8, head_dim=64)
    cfg = PrunedAttnConfig()
    ratios = [
        count_flops(n, 2, geom, cfg, mode="pruned").ratio
        for n in (4096, 8192, 16384, 32768, 65536, 131072)
    ]
    assert all(b > a for a, b in zip(ratios, ratios[1:]))


def test_ratio_at_least_one_in_reference_regime():
    # Holds when the budget is well under n; near-budget configurations
    # can dip below one because pruned work counts full rectangles.
    geom = HeadGeometry(n_heads=2, head_dim=32)
    cfg = PrunedAttnConfig()
    for n in (2048, 4096, 16384, 131072):
        report = count_flops(n, 3, geom, cfg, mode="pruned")
        assert report.dense >= 0 and report.pruned >= 0 and report.overhead >= 0
        if cfg.budget < n and n > cfg.segment_size:
            assert report.ratio >= 1.0


def test_dense_mode_reports_unit_ratio():
    geom = HeadGeometry(n_heads=2, head_dim=16)
    report = count_flops(4096, 2, geom, PrunedAttnConfig(), mode="dense")
    assert report.pruned == report.dense
    assert report.overhead == 0
    assert report.ratio == 1.0


def test_fallback_prices_the_dense_plan():
    geom = HeadGeometry(n_heads=2, head_dim=16)
    cfg = PrunedAttnConfig(budget=1024)
    report = count_flops(512, 2, geom, cfg, mode="pruned")  # n <= budget
    assert report.pruned == report.dense
    assert report.overhead == 0


def test_per_layer_breakdown_sums_to_totals():
    geom = HeadGeometry(n_heads=3, head_dim=8)
    cfg = PrunedAttnConfig(segment_size=128, block_size=16, budget=256)
    report = count_flops(2048, 4, geom, cfg, mode="pruned")
    assert sum(l.dense for l in report.per_layer) == report.dense
    assert sum(l.pruned for l in report.per_layer) == report.pruned
    assert sum(l.overhead for l in report.per_layer) == report.overhead


def test_gathered_tokens_tail_block_accounting():
    cfg = PrunedAttnConfig(segment_size=16, block_size=8, budget=32)
    n = 44  # tail block holds 4 tokens and is diagonal for the last segment
    last = num_segments(n, cfg.segment_size) - 1
    toks = gathered_tokens(last, cfg, n)
    assert toks % cfg.block_size == 4
    # earlier segments never see the tail block
    assert gathered_tokens(0, cfg, n) % cfg.block_size == 0


def test_unknown_mode_rejected():
    with pytest.raises(ConfigError):
        count_flops(64, 1, HeadGeometry(1, 8), PrunedAttnConfig(), mode="fast")
