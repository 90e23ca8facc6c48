"""Seeded random data generation with a fixed, portable bit stream.

All synthetic inputs (weights, hidden states, drifting queries, planted
needles) flow through one generator so that a seed reproduces the exact
same bytes on any machine or implementation. The generator is splitmix64;
standard normal variates come from the Box-Muller transform. Neither is
configurable: portability of the stream is the point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# 2^-53; maps the top 53 bits of a 64-bit word onto a double in [0, 1).
_UNIT = float(2.0**-53)

# Substream assignments, so the major consumers never share words.
SUBSTREAM_WEIGHTS = 0
SUBSTREAM_INPUTS = 1
SUBSTREAM_SYNTH = 2


def _mix(state: np.ndarray) -> np.ndarray:
    z = state
    z = ((z >> np.uint64(30)) ^ z) * np.uint64(_MIX1)
    z = ((z >> np.uint64(27)) ^ z) * np.uint64(_MIX2)
    return (z >> np.uint64(31)) ^ z


class SplitMix64:
    """Stateful splitmix64 stream.

    The k-th output (1-based) is mix(seed + k * gamma mod 2^64), so a
    whole batch can be produced by vectorizing over k without changing
    the sequence a scalar loop would produce.
    """

    def __init__(self, seed: int):
        self.seed = seed & 0xFFFFFFFFFFFFFFFF
        self._drawn = 0  # words consumed so far

    def next_words(self, count: int) -> np.ndarray:
        """Return the next `count` raw 64-bit words as uint64."""
        if count < 0:
            raise ValueError("count must be nonnegative")
        start = self._drawn + 1
        with np.errstate(over="ignore"):
            ks = np.arange(start, start + count, dtype=np.uint64)
            states = (np.uint64(self.seed) + ks * np.uint64(_GAMMA)) & _MASK64
            out = _mix(states)
        self._drawn += count
        return out

    def uniforms(self, count: int) -> np.ndarray:
        """Doubles in [0, 1), one word each (top 53 bits)."""
        words = self.next_words(count)
        return (words >> np.uint64(11)).astype(np.float64) * _UNIT

    def normals(self, count: int) -> np.ndarray:
        """Standard normal doubles via Box-Muller.

        Pairs (z0, z1) are produced from consecutive uniforms (u1, u2):
          z0 = sqrt(-2 ln u1) cos(2 pi u2)
          z1 = sqrt(-2 ln u1) sin(2 pi u2)
        u1 is shifted into (0, 1] so the log never sees zero. An odd
        `count` still consumes a full pair of words, keeping the stream
        position independent of how callers batch their draws... as long
        as they batch identically, which is why every consumer draws
        whole tensors at once.
        """
        pairs = (count + 1) // 2
        words = self.next_words(2 * pairs)
        u1 = ((words[0::2] >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * _UNIT
        u2 = (words[1::2] >> np.uint64(11)).astype(np.float64) * _UNIT
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = radius * np.cos(theta)
        out[1::2] = radius * np.sin(theta)
        return out[:count]

    def normal_matrix(self, rows: int, cols: int) -> np.ndarray:
        """Row-major (rows, cols) matrix of standard normals."""
        return self.normals(rows * cols).reshape(rows, cols)


@dataclass(frozen=True)
class RngSpec:
    """Seed plus the (fixed) generator identity.

    Carried through configs and reports so a run can name exactly how its
    synthetic data was produced.
    """

    seed: int
    algorithm: str = "splitmix64"
    normal_method: str = "box-muller"

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")
        if self.algorithm != "splitmix64":
            raise ValueError(f"unsupported generator: {self.algorithm}")
        if self.normal_method != "box-muller":
            raise ValueError(f"unsupported normal method: {self.normal_method}")

    def stream(self, substream: int = 0) -> SplitMix64:
        """Open an independent stream.

        Substreams are derived by mixing the substream index into the
        seed with the same finalizer, so distinct indices give streams
        that never collide in practice.
        """
        if substream == 0:
            return SplitMix64(self.seed)
        with np.errstate(over="ignore"):
            derived = _mix(
                (np.uint64(self.seed) + np.uint64(substream) * np.uint64(_GAMMA))
                & _MASK64
            )
        return SplitMix64(int(derived) ^ 0x5851F42D4C957F2D)
