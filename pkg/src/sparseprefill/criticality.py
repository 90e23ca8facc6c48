"""Segment-wise query-criticality estimation and its exact counterpart.

The estimator scores each (query segment, cache block) pair from four
representative inner products (elementwise max/min of the segment's
queries against elementwise max/min of the block's keys), averages the
softmaxed score grids pairwise, takes the elementwise max, zeroes
causally invisible blocks, and optionally blends with the previous
layer's scores. The exact token-wise critical set (a full ranking of
key logits per query) serves as the ground-truth tool for measuring how
much nearby queries share their critical cache entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attn_core import ConfigError, require_matrix, softmax_rows
from .partition import diagonal_block_span, num_blocks, num_segments


@dataclass
class SegmentRepresentatives:
    """Elementwise max/min proxies per query segment and per key block.

    Carries the partition geometry it was built under so downstream
    scoring can reconstruct the causal visibility of each block.
    """

    q_max: np.ndarray
    q_min: np.ndarray
    k_max: np.ndarray
    k_min: np.ndarray
    n_tokens: int
    segment_size: int
    block_size: int


@dataclass
class CriticalityMatrix:
    """Scores between query segments (rows) and cache blocks (columns).

    One instance per head per layer. Entries live in [0, 1]; causally
    invisible (segment, block) pairs are exact zeros.
    """

    scores: np.ndarray
    n_tokens: int
    segment_size: int
    block_size: int

    @property
    def n1(self) -> int:
        return self.scores.shape[0]

    @property
    def n2(self) -> int:
        return self.scores.shape[1]

    def geometry_matches(self, other: "CriticalityMatrix") -> bool:
        return (
            self.n_tokens == other.n_tokens
            and self.segment_size == other.segment_size
            and self.block_size == other.block_size
        )

    def validate(self) -> None:
        """Check the score-matrix invariants; raises ConfigError on breach."""
        expect = (
            num_segments(self.n_tokens, self.segment_size),
            num_blocks(self.n_tokens, self.block_size),
        )
        if self.scores.shape != expect:
            raise ConfigError(f"score shape {self.scores.shape}, expected {expect}")
        if self.scores.min() < 0 or self.scores.max() > 1:
            raise ConfigError("scores outside [0, 1]")
        visible = _visibility(self.n_tokens, self.segment_size, self.block_size)
        if np.any(self.scores[~visible] != 0):
            raise ConfigError("causally masked entries must be exact zeros")


@dataclass
class CriticalSet:
    """Top-k key positions for one query, in rank order (ties: lower index)."""

    query_index: int
    indices: np.ndarray
    k: int


def segment_representatives(
    q: np.ndarray,
    segment_size: int,
    k: np.ndarray,
    block_size: int,
) -> SegmentRepresentatives:
    """Reduce per-head Q over segments and K over blocks, elementwise.

    Ragged tails reduce over their actual tokens; there is no padding
    value that is neutral for max and min at the same time.
    """
    require_matrix("q", q)
    require_matrix("k", k)
    if segment_size < 1 or block_size < 1:
        raise ConfigError("segment_size and block_size must be >= 1")
    n = q.shape[0]
    if n == 0 or k.shape[0] == 0:
        raise ConfigError("empty input")
    if k.shape[0] != n:
        raise ConfigError(f"q has {n} rows, k has {k.shape[0]}")

    seg_starts = np.arange(0, n, segment_size)
    blk_starts = np.arange(0, n, block_size)
    return SegmentRepresentatives(
        q_max=np.maximum.reduceat(q, seg_starts, axis=0),
        q_min=np.minimum.reduceat(q, seg_starts, axis=0),
        k_max=np.maximum.reduceat(k, blk_starts, axis=0),
        k_min=np.minimum.reduceat(k, blk_starts, axis=0),
        n_tokens=n,
        segment_size=segment_size,
        block_size=block_size,
    )


def _visibility(n_tokens: int, segment_size: int, block_size: int) -> np.ndarray:
    """(n1, n2) bool grid: block visible to segment under the causal mask.

    A block is visible iff its first token does not lie past the
    segment's last token; blocks partially overlapping the segment
    count as visible.
    """
    n1 = num_segments(n_tokens, segment_size)
    n2 = num_blocks(n_tokens, block_size)
    last_visible = np.array(
        [diagonal_block_span(j, segment_size, block_size, n_tokens)[1] for j in range(n1)]
    )
    return np.arange(n2)[None, :] <= last_visible[:, None]


def estimate_criticality(
    reps: SegmentRepresentatives,
    s_prev: CriticalityMatrix | None = None,
    alpha: float = 0.25,
    scale_logits: bool = False,
) -> CriticalityMatrix:
    """Score cache blocks per query segment from the representatives.

    Softmax over blocks is applied to each of the four representative
    logit grids first; the causal zeroing happens after the grids are
    combined, so pre-mask softmax mass does leak to invisible blocks.
    Only the ranking among visible blocks is consumed downstream, which
    is why that ordering is acceptable.

    With `s_prev` present the result is the convex blend
    alpha * current + (1 - alpha) * previous; without it the current
    scores pass through unchanged (the first layer has no predecessor).
    Representative logits are unscaled by default; `scale_logits`
    divides them by sqrt(head_dim) like the attention kernel does.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    # Plain python float: a numpy scalar would promote float32 grids to float64.
    scale = 1.0 / math.sqrt(reps.q_max.shape[1]) if scale_logits else 1.0

    att_max_max = softmax_rows(scale * (reps.q_max @ reps.k_max.T))
    att_max_min = softmax_rows(scale * (reps.q_max @ reps.k_min.T))
    att_min_max = softmax_rows(scale * (reps.q_min @ reps.k_max.T))
    att_min_min = softmax_rows(scale * (reps.q_min @ reps.k_min.T))

    upper = (att_max_max + att_min_max) / 2
    lower = (att_max_min + att_min_min) / 2
    scores = np.maximum(upper, lower)

    visible = _visibility(reps.n_tokens, reps.segment_size, reps.block_size)
    scores = np.where(visible, scores, scores.dtype.type(0))

    current = CriticalityMatrix(
        scores=scores,
        n_tokens=reps.n_tokens,
        segment_size=reps.segment_size,
        block_size=reps.block_size,
    )
    return fuse_scores(current, s_prev, alpha)


def fuse_scores(
    current: CriticalityMatrix,
    previous: CriticalityMatrix | None,
    alpha: float,
) -> CriticalityMatrix:
    """Convex blend with the previous layer's scores; identity without one."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    if previous is None:
        return current
    if not current.geometry_matches(previous):
        raise ConfigError("previous scores were built under a different geometry")
    blended = alpha * current.scores + (1.0 - alpha) * previous.scores
    return CriticalityMatrix(
        scores=blended,
        n_tokens=current.n_tokens,
        segment_size=current.segment_size,
        block_size=current.block_size,
    )


def exact_critical_set(
    q: np.ndarray, position: int, keys: np.ndarray, k: int
) -> CriticalSet:
    """Exact top-k cache positions for the query at `position`.

    Softmax is strictly increasing, so ranking the raw logits q . K[j]
    over the causal candidates j <= position is exact. Logits are
    computed in float64 regardless of input dtype: this function is the
    ground-truth side of every comparison, and ranking must not depend
    on the production precision. Ties break toward the lower index.
    """
    require_matrix("keys", keys)
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if not 0 <= position < keys.shape[0]:
        raise ConfigError(f"position {position} out of range")
    logits = keys[: position + 1].astype(np.float64) @ q.astype(np.float64)
    order = np.argsort(-logits, kind="stable")[:k]
    return CriticalSet(query_index=position, indices=order.astype(np.int64), k=k)


def locality_overlap(a: CriticalSet, b: CriticalSet) -> float:
    """Shared fraction |a n b| / k of two critical sets."""
    if a.k != b.k:
        raise ConfigError(f"mismatched k: {a.k} vs {b.k}")
    return np.intersect1d(a.indices, b.indices).size / a.k


def locality_matrix(
    q: np.ndarray,
    keys: np.ndarray,
    k: int,
    stride: int,
    start: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise critical-set overlap over subsampled query positions.

    Positions start at k - 1 by default, the first query whose causal
    candidate pool already holds k entries; earlier queries have
    truncated sets and would drag the diagonal below 1. Returns
    (positions, grid) with grid symmetric and unit diagonal.
    """
    require_matrix("q", q)
    n = q.shape[0]
    if k > n:
        raise ConfigError(f"k={k} exceeds sequence length {n}")
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    if start is None:
        start = k - 1
    positions = np.arange(start, n, stride)
    if positions.size == 0:
        raise ConfigError("no query positions to sample")

    sets = [exact_critical_set(q[p], int(p), keys, k) for p in positions]
    m = len(sets)
    grid = np.ones((m, m), dtype=np.float64)
    for a in range(m):
        for b in range(a + 1, m):
            grid[a, b] = grid[b, a] = locality_overlap(sets[a], sets[b])
    return positions, grid


def locality_summary(
    positions: np.ndarray, grid: np.ndarray, n_tokens: int
) -> dict:
    """Mean overlap of adjacent sampled pairs vs pairs >= n/2 apart.

    Under causal ranking the expected overlap of two unrelated sets is
    roughly k over the later position's pool size, so the two pools are
    restricted to the same range of later positions; otherwise pool-size
    drift alone would fake a locality gap. Adjacent means consecutive
    sampled positions.
    """
    threshold = n_tokens // 2
    floor = positions[0] + threshold
    adjacent = [
        grid[t - 1, t] for t in range(1, len(positions)) if positions[t] >= floor
    ]
    distant = [
        grid[s, t]
        for t in range(len(positions))
        for s in range(t)
        if positions[t] - positions[s] >= threshold
    ]
    if not adjacent or not distant:
        raise ConfigError(
            "sampled window too narrow for an adjacent-vs-distant comparison"
        )
    adjacent_mean = float(np.mean(adjacent))
    distant_mean = float(np.mean(distant))
    return {
        "adjacent_mean": adjacent_mean,
        "distant_mean": distant_mean,
        "gap": adjacent_mean - distant_mean,
        "adjacent_pairs": len(adjacent),
        "distant_pairs": len(distant),
    }
