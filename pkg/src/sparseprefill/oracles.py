"""Independent 64-bit reference implementations for verification.

Everything here recomputes a result the production code also produces,
on purpose in the dumbest credible way: explicit loops, float64, no
shared helpers with the checked path. These are the other side of every
dual-route comparison; keep them boring.
"""

from __future__ import annotations

import math

import numpy as np


def matmul_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop float64 matrix multiply."""
    n, inner = a.shape
    inner2, m = b.shape
    assert inner == inner2
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(inner):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


def causal_attention_oracle_tripleloop(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, scale: float
) -> np.ndarray:
    """Per-row, per-key, per-dim causal attention. Small n only."""
    n, d = q.shape
    out = np.zeros((n, d), dtype=np.float64)
    for i in range(n):
        logits = []
        for j in range(i + 1):
            acc = 0.0
            for t in range(d):
                acc += float(q[i, t]) * float(k[j, t])
            logits.append(scale * acc)
        top = max(logits)
        weights = [math.exp(l - top) for l in logits]
        denom = sum(weights)
        for j in range(i + 1):
            w = weights[j] / denom
            for t in range(d):
                out[i, t] += w * float(v[j, t])
    return out


def causal_attention_oracle_rowwise(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, scale: float
) -> np.ndarray:
    """Row-at-a-time float64 causal attention; usable up to a few thousand rows."""
    n, d = q.shape
    q64 = q.astype(np.float64)
    k64 = k.astype(np.float64)
    v64 = v.astype(np.float64)
    out = np.zeros((n, d), dtype=np.float64)
    for i in range(n):
        logits = scale * (k64[: i + 1] @ q64[i])
        weights = np.exp(logits - logits.max())
        weights /= weights.sum()
        out[i] = weights @ v64[: i + 1]
    return out


def _softmax_1d(row: list[float]) -> list[float]:
    top = max(row)
    exps = [math.exp(x - top) for x in row]
    denom = sum(exps)
    return [e / denom for e in exps]


def criticality_transcription_oracle(
    q: np.ndarray,
    k: np.ndarray,
    segment_size: int,
    block_size: int,
    s_prev: np.ndarray | None,
    alpha: float,
    scale_logits: bool = False,
) -> np.ndarray:
    """Step-by-step float64 transcription of the segment scoring procedure.

    Follows the estimation steps literally: partition, per-partition
    elementwise max/min, the four softmaxed representative score grids,
    pairwise averages, elementwise max, causal zeroing, then the convex
    blend with the previous layer's scores. All scalar loops.
    """
    n, d = q.shape
    n1 = -(-n // segment_size)
    n2 = -(-n // block_size)
    scale = 1.0 / math.sqrt(d) if scale_logits else 1.0

    def reduce(mat, size, count, fn):
        reps = []
        for idx in range(count):
            rows = mat[idx * size : min((idx + 1) * size, n)]
            rep = [fn(float(rows[r, c]) for r in range(rows.shape[0])) for c in range(rows.shape[1])]
            reps.append(rep)
        return reps

    q_max = reduce(q, segment_size, n1, max)
    q_min = reduce(q, segment_size, n1, min)
    k_max = reduce(k, block_size, n2, max)
    k_min = reduce(k, block_size, n2, min)

    def score_grid(qs, ks):
        grid = []
        for row in qs:
            logits = [scale * sum(a * b for a, b in zip(row, col)) for col in ks]
            grid.append(_softmax_1d(logits))
        return grid

    g1 = score_grid(q_max, k_max)
    g2 = score_grid(q_max, k_min)
    g3 = score_grid(q_min, k_max)
    g4 = score_grid(q_min, k_min)

    s = np.zeros((n1, n2), dtype=np.float64)
    for j in range(n1):
        for b in range(n2):
            upper = (g1[j][b] + g3[j][b]) / 2.0
            lower = (g2[j][b] + g4[j][b]) / 2.0
            s[j, b] = max(upper, lower)

    for j in range(n1):
        seg_last = min((j + 1) * segment_size, n) - 1
        for b in range(n2):
            if b * block_size > seg_last:
                s[j, b] = 0.0

    if s_prev is not None:
        s = alpha * s + (1.0 - alpha) * np.asarray(s_prev, dtype=np.float64)
    return s


def gather_then_dense_oracle(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    segment_size: int,
    block_size: int,
    selections: list[np.ndarray],
    scale: float,
) -> np.ndarray:
    """Recompute pruned attention from the given per-segment selections.

    Same selections, float64, naive per-row attention over the gathered
    keys with the token-level causal mask. Checks the kernel, not the
    selector.
    """
    n, d = q.shape
    q64 = q.astype(np.float64)
    k64 = k.astype(np.float64)
    v64 = v.astype(np.float64)
    out = np.zeros((n, d), dtype=np.float64)
    for j, blocks in enumerate(selections):
        tokens = np.concatenate(
            [
                np.arange(b * block_size, min((b + 1) * block_size, n))
                for b in blocks
            ]
        )
        seg_lo = j * segment_size
        seg_hi = min(seg_lo + segment_size, n)
        for i in range(seg_lo, seg_hi):
            vis = tokens[tokens <= i]
            logits = scale * (k64[vis] @ q64[i])
            weights = np.exp(logits - logits.max())
            weights /= weights.sum()
            out[i] = weights @ v64[vis]
    return out


def fusion_unrolled_oracle(
    raw_per_layer: list[np.ndarray], alpha: float
) -> list[np.ndarray]:
    """Expected fused scores per layer, via explicit blend coefficients.

    Layer L's fused scores are sum_i c_i * raw_i with c_L = alpha,
    c_i = alpha * (1-alpha)^(L-i) for 0 < i < L, and the first layer
    keeping the remaining (1-alpha)^L (no predecessor means its raw
    scores pass through whole). Computed without the recursive blend the
    pipeline uses.
    """
    fused = []
    for top in range(len(raw_per_layer)):
        acc = np.zeros_like(raw_per_layer[0], dtype=np.float64)
        for i in range(top + 1):
            if i == 0:
                coeff = (1.0 - alpha) ** top
            else:
                coeff = alpha * (1.0 - alpha) ** (top - i)
            acc += coeff * raw_per_layer[i].astype(np.float64)
        fused.append(acc)
    return fused
