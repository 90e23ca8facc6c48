"""Analytic FLOP accounting for dense vs pruned prefill.

Wall-clock speedups are hardware stories; the accounting here is the
portable stand-in. Counts are exact integers from closed forms (2 FLOPs
per multiply-add), so reports reproduce bit-for-bit regardless of
threading or timing. Only attention-path work is counted: projections
cost the same in both modes and would only dilute the ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

from .attn_core import ConfigError, HeadGeometry
from .partition import (
    diagonal_block_span,
    num_blocks,
    num_segments,
    segment_bounds,
)
from .pruned_attn import PrunedAttnConfig, dense_fallback_policy


@dataclass(frozen=True)
class LayerFlops:
    dense: int
    pruned: int
    overhead: int


@dataclass
class FlopReport:
    """Attention FLOPs for one run configuration.

    `dense` is always the unpruned baseline; `pruned` and `overhead` are
    the executed plan's attention and estimation costs. In dense mode
    (or under the dense fallback) the executed plan is the baseline
    itself, so pruned == dense and overhead == 0.
    """

    mode: str
    n_tokens: int
    dense: int
    pruned: int
    overhead: int
    per_layer: list[LayerFlops]

    @property
    def ratio(self) -> float:
        return self.dense / (self.pruned + self.overhead)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n": self.n_tokens,
            "dense": self.dense,
            "pruned": self.pruned,
            "overhead": self.overhead,
            "ratio": self.ratio,
            "per_layer": [
                {"dense": l.dense, "pruned": l.pruned, "overhead": l.overhead}
                for l in self.per_layer
            ],
        }


def dense_attention_flops_per_head(n: int, head_dim: int) -> int:
    """Causal QK^T plus AV: 4*d*sum_{i=1..n} i = 2*d*n*(n+1)."""
    return 2 * head_dim * n * (n + 1)


def gathered_tokens(j: int, cfg: PrunedAttnConfig, n: int) -> int:
    """Tokens the selection for segment j gathers, from geometry alone.

    Eligibility is a prefix of the block axis ending at the segment's
    diagonal span, so the ragged tail block can only ever be selected
    where it is diagonal (and then it is forced in). Scores decide which
    full interior blocks win, never how many tokens are gathered.
    """
    diag_first, diag_last = diagonal_block_span(
        j, cfg.segment_size, cfg.block_size, n
    )
    eligible = diag_last + 1
    n_sel = max(min(cfg.budget_blocks, eligible), diag_last - diag_first + 1)
    tokens = n_sel * cfg.block_size
    tail_len = n - (num_blocks(n, cfg.block_size) - 1) * cfg.block_size
    if tail_len != cfg.block_size and diag_last == num_blocks(n, cfg.block_size) - 1:
        tokens -= cfg.block_size - tail_len
    return tokens


def pruned_attention_flops_per_head(n: int, head_dim: int, cfg: PrunedAttnConfig) -> int:
    """Sum over segments of 4*d*(segment tokens)*(gathered tokens)."""
    total = 0
    for j in range(num_segments(n, cfg.segment_size)):
        start, stop = segment_bounds(j, cfg.segment_size, n)
        total += 4 * head_dim * (stop - start) * gathered_tokens(j, cfg, n)
    return total


def estimation_flops_per_head(n: int, head_dim: int, cfg: PrunedAttnConfig) -> int:
    """Representative reductions, four score products, combination/fusion.

    Max and min passes over n*d, twice (Q and K); four representative
    products at 2*d*n1*n2 each; 5*n1*n2 for averaging, elementwise max,
    masking, and the fusion blend.
    """
    n1 = num_segments(n, cfg.segment_size)
    n2 = num_blocks(n, cfg.block_size)
    return 4 * n * head_dim + 4 * (2 * head_dim * n1 * n2) + 5 * n1 * n2


def count_flops(
    n_tokens: int,
    n_layers: int,
    geom: HeadGeometry,
    cfg: PrunedAttnConfig,
    mode: str = "pruned",
) -> FlopReport:
    """Closed-form attention FLOPs for a prefill of `n_tokens`."""
    if mode not in ("dense", "pruned"):
        raise ConfigError(f"unknown mode: {mode}")
    if n_tokens < 1 or n_layers < 1:
        raise ConfigError("n_tokens and n_layers must be positive")

    h = geom.n_heads
    dense_layer = h * dense_attention_flops_per_head(n_tokens, geom.head_dim)
    if mode == "dense" or dense_fallback_policy(n_tokens, cfg):
        pruned_layer = dense_layer
        overhead_layer = 0
    else:
        pruned_layer = h * pruned_attention_flops_per_head(n_tokens, geom.head_dim, cfg)
        overhead_layer = h * estimation_flops_per_head(n_tokens, geom.head_dim, cfg)

    per_layer = [
        LayerFlops(dense=dense_layer, pruned=pruned_layer, overhead=overhead_layer)
        for _ in range(n_layers)
    ]
    return FlopReport(
        mode=mode,
        n_tokens=n_tokens,
        dense=n_layers * dense_layer,
        pruned=n_layers * pruned_layer,
        overhead=n_layers * overhead_layer,
        per_layer=per_layer,
    )
