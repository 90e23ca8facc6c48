"""Segment/block geometry over a token axis.

Queries are cut into fixed-size segments and the key-value cache into
fixed-size blocks; the tails may be ragged when the sizes do not divide
the token count. Everything downstream (estimation, selection, FLOP
accounting) shares these little helpers so the three never disagree on
who owns which token.
"""

from __future__ import annotations


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def num_segments(n_tokens: int, segment_size: int) -> int:
    return ceil_div(n_tokens, segment_size)


def num_blocks(n_tokens: int, block_size: int) -> int:
    return ceil_div(n_tokens, block_size)


def segment_bounds(j: int, segment_size: int, n_tokens: int) -> tuple[int, int]:
    """Token range [start, stop) of segment j; stop is clipped at n."""
    start = j * segment_size
    if start >= n_tokens:
        raise IndexError(f"segment {j} out of range for {n_tokens} tokens")
    return start, min(start + segment_size, n_tokens)


def block_bounds(b: int, block_size: int, n_tokens: int) -> tuple[int, int]:
    """Token range [start, stop) of block b; stop is clipped at n."""
    start = b * block_size
    if start >= n_tokens:
        raise IndexError(f"block {b} out of range for {n_tokens} tokens")
    return start, min(start + block_size, n_tokens)


def diagonal_block_span(
    j: int, segment_size: int, block_size: int, n_tokens: int
) -> tuple[int, int]:
    """Inclusive range [first, last] of blocks overlapping segment j's tokens."""
    start, stop = segment_bounds(j, segment_size, n_tokens)
    return start // block_size, (stop - 1) // block_size


def eligible_block_count(
    j: int, segment_size: int, block_size: int, n_tokens: int
) -> int:
    """Blocks whose first token is visible to segment j (causal).

    A block is eligible iff its first token index is <= the segment's
    last token index, so eligibility is a prefix of the block axis.
    """
    _, last = diagonal_block_span(j, segment_size, block_size, n_tokens)
    return last + 1
