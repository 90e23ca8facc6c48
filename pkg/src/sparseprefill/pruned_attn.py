"""Budgeted block-sparse causal attention.

Each query segment attends only to its top-scoring cache blocks, up to a
token budget. Selected blocks are gathered into a contiguous key/value
slab per segment before the kernel runs: keeping the inner products
dense over a structured gather is what makes segment-level sparsity pay,
where token-level sparsity would shred the matrix multiplies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attn_core import ConfigError, default_scale, require_matrix, softmax_rows
from .criticality import CriticalityMatrix
from .partition import (
    block_bounds,
    diagonal_block_span,
    num_segments,
    segment_bounds,
)


@dataclass(frozen=True)
class PrunedAttnConfig:
    """Segment/block geometry, token budget, and score-fusion weight.

    Defaults are the reference operating point: 512-token query
    segments, 32-token cache blocks, a 1024-token budget, fusion weight
    0.25. `scale` overrides the attention kernel's 1/sqrt(head_dim);
    `scale_logits` applies that same scaling inside the estimator, which
    leaves representative logits unscaled by default.
    """

    segment_size: int = 512
    block_size: int = 32
    budget: int = 1024
    alpha: float = 0.25
    scale_logits: bool = False
    scale: float | None = None

    def __post_init__(self):
        if self.segment_size < 1:
            raise ConfigError("segment_size must be >= 1")
        if self.block_size < 1:
            raise ConfigError("block_size must be >= 1")
        if self.budget < self.block_size:
            raise ConfigError("budget must be >= block_size")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.scale is not None and self.scale <= 0:
            raise ConfigError("scale must be positive")

    @property
    def budget_blocks(self) -> int:
        return max(1, self.budget // self.block_size)

    def attention_scale(self, head_dim: int) -> float:
        return self.scale if self.scale is not None else default_scale(head_dim)


@dataclass
class BlockSelection:
    """Cache blocks chosen for one query segment, ascending."""

    segment_index: int
    block_indices: np.ndarray
    budget_blocks: int


def dense_fallback_policy(n_tokens: int, cfg: PrunedAttnConfig) -> bool:
    """True when pruning cannot remove anything worth removing.

    With the budget covering the whole sequence every block gets
    selected anyway, and a single (possibly partial) segment has nothing
    to share an estimate with; callers run dense attention instead.
    """
    return n_tokens <= cfg.budget or n_tokens <= cfg.segment_size


def select_blocks(
    s_row: np.ndarray,
    segment_index: int,
    cfg: PrunedAttnConfig,
    n_tokens: int,
) -> BlockSelection:
    """Pick the cache blocks segment `segment_index` will attend to.

    Blocks overlapping the segment's own token range are always in: the
    scores never get a vote on local attention. Remaining slots go to
    the highest-scoring causally eligible blocks, ties to the lower
    index. The selection shrinks when fewer blocks are eligible than the
    budget allows, and exceeds the budget only in the degenerate case
    where the forced diagonal blocks alone already do.
    """
    diag_first, diag_last = diagonal_block_span(
        segment_index, cfg.segment_size, cfg.block_size, n_tokens
    )
    eligible = diag_last + 1
    if len(s_row) < eligible:
        raise ConfigError(
            f"score row has {len(s_row)} entries, segment needs {eligible}"
        )
    target = min(cfg.budget_blocks, eligible)
    forced = np.arange(diag_first, diag_last + 1, dtype=np.int64)

    free = target - len(forced)
    if free > 0:
        # Candidates are exactly the blocks strictly before the diagonal span.
        ranked = np.argsort(-np.asarray(s_row[:diag_first]), kind="stable")
        extra = np.sort(ranked[:free].astype(np.int64))
        chosen = np.concatenate([extra, forced])
    else:
        chosen = forced
    return BlockSelection(
        segment_index=segment_index,
        block_indices=chosen,
        budget_blocks=cfg.budget_blocks,
    )


def gathered_token_indices(
    selection: BlockSelection, block_size: int, n_tokens: int
) -> np.ndarray:
    """Absolute token indices covered by a selection, ascending."""
    spans = [
        np.arange(*block_bounds(int(b), block_size, n_tokens))
        for b in selection.block_indices
    ]
    return np.concatenate(spans)


def pruned_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    scores: CriticalityMatrix,
    cfg: PrunedAttnConfig,
    keep_weights: bool = False,
) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]] | None]:
    """Single-head block-sparse causal attention under `scores`.

    Per segment: select blocks, gather their keys and values into
    contiguous slabs, attend with token-level causal masking inside
    blocks that overlap the segment (a gathered key must never be
    visible to a query it follows), and write the rows back in order.

    Returns (out, debug) where debug is a per-segment list of
    (attention weights over the gathered tokens, gathered token indices)
    when keep_weights is set.
    """
    for name, m in (("q", q), ("k", k), ("v", v)):
        require_matrix(name, m)
    n, d = q.shape
    if k.shape != (n, d) or v.shape != (n, d):
        raise ConfigError("q/k/v shapes differ")
    if scores.n_tokens != n:
        raise ConfigError(
            f"scores were built for {scores.n_tokens} tokens, inputs have {n}"
        )
    if scores.segment_size != cfg.segment_size or scores.block_size != cfg.block_size:
        raise ConfigError("scores geometry does not match config")

    scale = q.dtype.type(cfg.attention_scale(d))
    out = np.empty((n, d), dtype=q.dtype)
    debug: list[tuple[np.ndarray, np.ndarray]] | None = [] if keep_weights else None

    for j in range(num_segments(n, cfg.segment_size)):
        seg_start, seg_stop = segment_bounds(j, cfg.segment_size, n)
        selection = select_blocks(scores.scores[j], j, cfg, n)
        assert selection.block_indices.size > 0  # diagonal forcing guarantees this
        gathered = gathered_token_indices(selection, cfg.block_size, n)

        logits = scale * (q[seg_start:seg_stop] @ k[gathered].T)
        query_pos = np.arange(seg_start, seg_stop)
        visible = gathered[None, :] <= query_pos[:, None]
        w = softmax_rows(logits, mask=visible)
        out[seg_start:seg_stop] = w @ v[gathered]
        if debug is not None:
            debug.append((w, gathered))
    return out, debug
