"""Delayed-pattern transform for multi-stream token grids.

Stream j (1-indexed) is shifted by delay*(j-1) frames so a single
autoregressive pass over delayed frames predicts all streams while keeping
low-to-high chain-rule order within a frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DelayedGrid, MalformedDelayedGridError, TokenGrid, special_ids


def apply_delay(g: TokenGrid, d: int) -> DelayedGrid:
    """Shift stream j by d*(j-1) frames, padding everything else."""
    t, m = g.frames, g.streams
    pad, bos, eos = special_ids(g.vocab_size)
    out = np.full((t + d * (m - 1), m), pad, dtype=np.int64)
    for j in range(m):
        out[d * j : d * j + t, j] = g.ids[:, j]
    return DelayedGrid(out, g.vocab_size, d, pad, bos, eos)


def remove_delay(dg: DelayedGrid) -> TokenGrid:
    """Exact inverse of apply_delay.

    Raises MalformedDelayedGridError if a required-pad slot holds a token or
    a real-token slot holds a special id.
    """
    d, m = dg.delay, dg.streams
    t = dg.token_frames
    if t < 0:
        raise MalformedDelayedGridError(
            f"{dg.frames} frames too few for {m} streams at delay {d}"
        )
    out = np.empty((t, m), dtype=np.int64)
    for j in range(m):
        col = dg.ids[:, j]
        window = col[d * j : d * j + t]
        if (window >= dg.vocab_size).any():
            raise MalformedDelayedGridError(
                f"special id inside the token window of stream {j + 1}"
            )
        before = col[: d * j]
        after = col[d * j + t :]
        if (before != dg.pad_id).any() or (after != dg.pad_id).any():
            raise MalformedDelayedGridError(
                f"non-pad value in a required-pad slot of stream {j + 1}"
            )
        out[:, j] = window
    return TokenGrid(out, dg.vocab_size)


def visible(t: int, j: int, k: int, d: int, m: int) -> int:
    """Last frame of stream k available when predicting token (t, j).

    Frames of stream k up to and including the returned value sit in
    strictly earlier delayed frames than position (t, j); the bound is
    t - 1 + d*(j - k), clamped at 0 (empty visibility). All arguments are
    1-indexed.
    """
    if not (1 <= j <= m and 1 <= k <= m):
        raise ValueError("stream indices must lie in [1, m]")
    if t < 1:
        raise ValueError("frame index must be >= 1")
    return max(0, t - 1 + d * (j - k))


BOS = "BOS"
EOS = "EOS"
PAD = "PAD"


@dataclass(frozen=True)
class Token:
    """A real-token position: original frame t and stream j, 1-indexed."""

    t: int
    j: int


def frame_layout(dg: DelayedGrid, framed: bool = False):
    """Classify every position of a delayed grid (plus optional framing).

    Returns a list over frames; each entry is a list of per-stream tags:
    BOS, EOS, PAD, or a Token(t, j). With framed=True one all-BOS frame is
    prepended and one all-EOS frame appended.
    """
    d, m, t_len = dg.delay, dg.streams, dg.token_frames
    layout = []
    if framed:
        layout.append([BOS] * m)
    for f in range(dg.frames):
        row = []
        for j in range(m):
            t = f - d * j  # 0-indexed original frame
            row.append(Token(t + 1, j + 1) if 0 <= t < t_len else PAD)
        layout.append(row)
    if framed:
        layout.append([EOS] * m)
    return layout
