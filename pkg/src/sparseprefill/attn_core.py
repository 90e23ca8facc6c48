"""Exact dense causal multi-head attention and the QKV projection step.

This is the non-pruned baseline path and the correctness reference for
the rest of the engine. Matrices are plain row-major numpy arrays:
float32 on the production path, float64 when a caller wants an oracle.
Per-head matrices are strided column views into the full (n, model_dim)
arrays, never copies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ConfigError(ValueError):
    """Inconsistent shapes, geometry, or parameter values."""


class MaskedRowError(ValueError):
    """A softmax row had every entry masked out."""


def require_matrix(name: str, m: np.ndarray) -> np.ndarray:
    """Validate the Matrix2D contract: 2-D, float32/float64, all finite."""
    if not isinstance(m, np.ndarray) or m.ndim != 2:
        raise ConfigError(f"{name} must be a 2-D array")
    if m.dtype not in (np.float32, np.float64):
        raise ConfigError(f"{name} must be float32 or float64, got {m.dtype}")
    if not np.isfinite(m).all():
        raise ConfigError(f"{name} contains non-finite elements")
    return m


def as_matrix(data, dtype=np.float32) -> np.ndarray:
    """Build a validated row-major matrix from nested sequences or an array."""
    m = np.ascontiguousarray(np.asarray(data, dtype=dtype))
    return require_matrix("matrix", m)


@dataclass(frozen=True)
class HeadGeometry:
    """Head count and per-head width; model_dim is their product."""

    n_heads: int
    head_dim: int

    def __post_init__(self):
        if self.n_heads < 1 or self.head_dim < 1:
            raise ConfigError("n_heads and head_dim must be positive")

    @property
    def model_dim(self) -> int:
        return self.n_heads * self.head_dim


def split_heads(m: np.ndarray, geom: HeadGeometry) -> list[np.ndarray]:
    """Per-head (n, head_dim) column views of an (n, model_dim) matrix."""
    if m.shape[1] != geom.model_dim:
        raise ConfigError(
            f"matrix has {m.shape[1]} columns, geometry wants {geom.model_dim}"
        )
    d = geom.head_dim
    return [m[:, h * d : (h + 1) * d] for h in range(geom.n_heads)]


@dataclass
class AttentionOutput:
    """Per-head outputs, plus per-head weight matrices in debug mode."""

    heads: list[np.ndarray]
    weights: list[np.ndarray] | None = None

    def merged(self) -> np.ndarray:
        """Concatenate heads back into an (n, model_dim) matrix."""
        return np.concatenate(self.heads, axis=1)


def project(
    x: np.ndarray, w_q: np.ndarray, w_k: np.ndarray, w_v: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Token-rows-times-weight projection of hidden states into Q, K, V.

    x is (n, model_dim); each weight is (model_dim, model_dim). The
    contract is row-vector x weight, so weights stored for the other
    convention must be transposed before they get here.
    """
    require_matrix("x", x)
    n, dim = x.shape
    for name, w in (("w_q", w_q), ("w_k", w_k), ("w_v", w_v)):
        require_matrix(name, w)
        if w.shape != (dim, dim):
            raise ConfigError(
                f"{name} has shape {w.shape}, expected ({dim}, {dim})"
            )
    return x @ w_q, x @ w_k, x @ w_v


def softmax_rows(m: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise softmax, stabilized by row-max subtraction.

    `mask` marks visible entries with True; masked entries come out as
    exact zeros. A fully masked row raises instead of returning NaN.
    Arithmetic stays in the input dtype.
    """
    if m.ndim != 2:
        raise ConfigError("softmax_rows expects a 2-D array")
    if mask is not None:
        if mask.shape != m.shape:
            raise ConfigError(f"mask shape {mask.shape} != matrix shape {m.shape}")
        if not mask.any(axis=1).all():
            bad = int(np.flatnonzero(~mask.any(axis=1))[0])
            raise MaskedRowError(f"row {bad} is fully masked")
        neg = np.array(-np.inf, dtype=m.dtype)
        m = np.where(mask, m, neg)
    # Row max is finite: fully masked rows were rejected above.
    row_max = m.max(axis=1, keepdims=True)
    out = np.exp(m - row_max)
    if mask is not None:
        out[~mask] = 0
    denom = out.sum(axis=1, keepdims=True)
    return out / denom


def dense_causal_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    scale: float,
    keep_weights: bool = False,
    row_block: int = 1024,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Single-head causal attention: out[i] = sum_{j<=i} A[i,j] v[j].

    The causal mask is applied to the logits before softmax. Query rows
    are processed in chunks of `row_block` so the (n, n) logit matrix is
    never materialized; peak extra memory is row_block * n floats.

    Returns (out, A) where A is the full (n, n) weight matrix when
    keep_weights is set (zeros above the diagonal) and None otherwise.
    """
    for name, m in (("q", q), ("k", k), ("v", v)):
        require_matrix(name, m)
    n, d = q.shape
    if k.shape[0] != n or v.shape[0] != n:
        raise ConfigError(
            f"q/k/v row counts differ: {n}, {k.shape[0]}, {v.shape[0]}"
        )
    if k.shape[1] != d or v.shape[1] != d:
        raise ConfigError("q/k/v column counts differ")
    if scale <= 0:
        raise ConfigError(f"scale must be positive, got {scale}")

    out = np.empty((n, d), dtype=q.dtype)
    weights = np.zeros((n, n), dtype=q.dtype) if keep_weights else None
    scale = q.dtype.type(scale)

    for r0 in range(0, n, row_block):
        r1 = min(r0 + row_block, n)
        logits = scale * (q[r0:r1] @ k[:r1].T)
        cols = np.arange(r1)
        rows = np.arange(r0, r1)
        visible = cols[None, :] <= rows[:, None]
        w = softmax_rows(logits, mask=visible)
        out[r0:r1] = w @ v[:r1]
        if weights is not None:
            weights[r0:r1, :r1] = w
    return out, weights


def default_scale(head_dim: int) -> float:
    return 1.0 / math.sqrt(head_dim)


def multi_head_dense_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    geom: HeadGeometry,
    scale: float | None = None,
    keep_weights: bool = False,
) -> AttentionOutput:
    """Dense causal attention over all heads of (n, model_dim) inputs."""
    if scale is None:
        scale = default_scale(geom.head_dim)
    heads: list[np.ndarray] = []
    per_head_weights: list[np.ndarray] = []
    for qh, kh, vh in zip(split_heads(q, geom), split_heads(k, geom), split_heads(v, geom)):
        out, w = dense_causal_attention(qh, kh, vh, scale, keep_weights=keep_weights)
        heads.append(out)
        if keep_weights:
            per_head_weights.append(w)
    return AttentionOutput(heads, per_head_weights if keep_weights else None)
