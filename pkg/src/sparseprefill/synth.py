"""Synthetic query/key constructions for the analysis commands.

Two families: drifting queries (a slow random walk, so nearby positions
should share critical cache entries) against i.i.d. controls, and the
planted-needle construction (one cache block carrying a large multiple
of a direction the final query segment points at, everything else
orthogonal to it) whose selection outcome is provable rather than
statistical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attn_core import ConfigError
from .criticality import estimate_criticality, segment_representatives
from .partition import block_bounds, num_blocks, num_segments, segment_bounds
from .pruned_attn import PrunedAttnConfig, select_blocks
from .rng import SUBSTREAM_SYNTH, RngSpec, SplitMix64

# Drift per step for the locality construction. Measured once at
# n=4096, k=512, d=64, stride=128 over seeds {0, 1, 7, 42}:
# adjacent-vs-distant gap 0.61..0.65, comfortably past the 0.1 margin
# the checks demand; the i.i.d. control lands at 0.01..0.04.
DEFAULT_DRIFT_SCALE = 0.005


def iid_matrix(n: int, d: int, stream: SplitMix64) -> np.ndarray:
    """Independent standard-normal rows; the no-structure control."""
    return stream.normal_matrix(n, d)


def drifting_queries(
    n: int, d: int, stream: SplitMix64, drift_scale: float = DEFAULT_DRIFT_SCALE
) -> np.ndarray:
    """Query rows performing a slow random walk from a unit start.

    Each row is the previous row plus drift_scale * N(0, I). Adjacent
    rows point almost the same way; rows far apart have mostly forgotten
    each other. Built cumulatively, so one vectorized draw suffices.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    q0 = stream.normals(d)
    q0 /= np.linalg.norm(q0)
    steps = stream.normal_matrix(n - 1, d) * drift_scale if n > 1 else None
    q = np.empty((n, d), dtype=np.float64)
    q[0] = q0
    if steps is not None:
        q[1:] = q0 + np.cumsum(steps, axis=0)
    return q


@dataclass
class NeedleCase:
    """One planted-retrieval instance plus its selection verdict."""

    n_tokens: int
    depth_frac: float
    planted_block: int
    found: bool
    forced_diagonal: bool
    score_margin: float


def build_needle(
    n: int,
    d: int,
    cfg: PrunedAttnConfig,
    depth_frac: float,
    magnitude: float,
    stream: SplitMix64,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Construct (Q, K, planted_block) for one needle instance.

    The planted block's keys are all magnitude * u for a random unit u;
    every other key is projected orthogonal to u; the final query
    segment's rows are exactly u. With magnitude > 0 the planted block's
    representative logit dominates the final segment's score row by
    construction, not by luck.
    """
    n2 = num_blocks(n, cfg.block_size)
    if not 0.0 <= depth_frac <= 1.0:
        raise ConfigError(
            f"depth {depth_frac} is outside [0, 1] (beyond the block axis)"
        )
    planted = min(int(depth_frac * n2), n2 - 1)

    u = stream.normals(d)
    u /= np.linalg.norm(u)

    keys = stream.normal_matrix(n, d)
    keys -= np.outer(keys @ u, u)  # background orthogonal to u
    b0, b1 = block_bounds(planted, cfg.block_size, n)
    keys[b0:b1] = magnitude * u

    q = stream.normal_matrix(n, d)
    last_start, _ = segment_bounds(
        num_segments(n, cfg.segment_size) - 1, cfg.segment_size, n
    )
    q[last_start:] = u
    return q, keys, planted


def needle_verdict(
    n: int,
    d: int,
    cfg: PrunedAttnConfig,
    depth_frac: float,
    magnitude: float,
    rng: RngSpec,
    dtype=np.float32,
) -> NeedleCase:
    """Run estimation + block selection and report whether the plant won.

    Exercises the production path at the production dtype: estimate the
    final segment's scores, select blocks under the budget, and check
    the planted block is among them.
    """
    stream = rng.stream(SUBSTREAM_SYNTH)
    q, keys, planted = build_needle(n, d, cfg, depth_frac, magnitude, stream)
    q = q.astype(dtype)
    keys = keys.astype(dtype)

    reps = segment_representatives(q, cfg.segment_size, keys, cfg.block_size)
    scores = estimate_criticality(reps, None, alpha=cfg.alpha, scale_logits=cfg.scale_logits)
    last_seg = num_segments(n, cfg.segment_size) - 1
    selection = select_blocks(scores.scores[last_seg], last_seg, cfg, n)

    row = scores.scores[last_seg]
    others = np.delete(row, planted)
    margin = float(row[planted] - others.max()) if others.size else float("inf")
    _, block_stop = block_bounds(planted, cfg.block_size, n)
    seg_start, _ = segment_bounds(last_seg, cfg.segment_size, n)
    return NeedleCase(
        n_tokens=n,
        depth_frac=depth_frac,
        planted_block=planted,
        found=bool(np.isin(planted, selection.block_indices)),
        forced_diagonal=block_stop - 1 >= seg_start,
        score_margin=margin,
    )
