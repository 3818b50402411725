"""Insertion-aware relative offsets.

A composed row ``z = left + y + [EOI] + right (+ style) (+ CLS)`` carries an
insertion span ``z[a..b]`` (1-based, inclusive) holding ``y`` and the EOI slot.
Offsets between positions are the raw ``i - j`` corrected so that the span
always looks one slot wide from the outside and the not-yet-generated tail of
``y`` looks one slot wide from the inside.  Pairs that would leak future span
content are illegal and get masked in attention.

Positions after the span (style token, CLS) are ordinary right-context
positions here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ILLEGAL = None
"""Returned by :func:`phi` and :func:`oracle_offset` for disallowed pairs."""

DEFAULT_MAX_OFFSET = 256


@dataclass(frozen=True)
class SpanLayout:
    total_len: int
    a: int
    b: int

    def __post_init__(self):
        if not (1 <= self.a <= self.b <= self.total_len):
            raise ValueError(f"invalid span layout a={self.a} b={self.b} total_len={self.total_len}")

    def in_span(self, p: int) -> bool:
        return self.a <= p <= self.b


@dataclass(frozen=True)
class OffsetMatrix:
    offsets: np.ndarray  # (T, T) int64, 0 where illegal
    legal: np.ndarray  # (T, T) bool

    def render(self) -> str:
        T = self.offsets.shape[0]
        width = max(3, max(len(f"{v:+d}") for v in self.offsets.reshape(-1)) + 1)
        head = "    " + "".join(f"{j:>{width}d}" for j in range(1, T + 1))
        rows = [head]
        for i in range(T):
            cells = []
            for j in range(T):
                cells.append(f"{self.offsets[i, j]:+d}" if self.legal[i, j] else ".")
            rows.append(f"{i + 1:>3d} " + "".join(f"{c:>{width}}" for c in cells))
        return "\n".join(rows)


def _sign(v: int) -> int:
    return (v > 0) - (v < 0)


def phi(a: int, b: int, i: int, j: int) -> int | None:
    """Offset correction for the pair (query ``i``, key ``j``); ``ILLEGAL`` if disallowed."""
    if (i < a and j < a) or (i > b and j > b):
        return 0
    if (i < a and j > b) or (i > b and j < a):
        return b - a
    if a <= i <= b:
        if j <= i:
            return 0
        if j > b:
            return b - i - 1
    return ILLEGAL


def effective_offset(a: int, b: int, i: int, j: int, l2r: bool = False) -> int | None:
    f = phi(a, b, i, j)
    if f is ILLEGAL:
        return ILLEGAL
    if l2r:
        return i - j
    return i - j - _sign(i - j) * f


def oracle_offset(a: int, b: int, i: int, j: int) -> int | None:
    """Effective offset from virtual coordinates, without the piecewise table.

    Contexts on opposite sides see the span collapsed to one slot; a span query
    looking right sees itself parked just before the EOI slot.
    """
    i_span, j_span = a <= i <= b, a <= j <= b
    i_left, j_left = i < a, j < a
    i_right, j_right = i > b, j > b
    if (i_left and j_left) or (i_right and j_right) or (i_span and j <= i):
        return i - j
    if (i_left and j_right) or (i_right and j_left):
        def c(p):
            return p if p < a else p - (b - a)
        return c(i) - c(j)
    if i_span and j_right:
        return (b - 1) - j
    return ILLEGAL


def build_offset_matrix(layout: SpanLayout, l2r: bool = False,
                        max_offset: int = DEFAULT_MAX_OFFSET) -> OffsetMatrix:
    """Vectorised :func:`effective_offset` over all pairs, clamped to +-max_offset.

    With ``l2r`` the correction is dropped (raw offsets) but legality is unchanged.
    """
    T, a, b = layout.total_len, layout.a, layout.b
    pos = np.arange(1, T + 1)
    i = pos[:, None]
    j = pos[None, :]
    i_l, i_s, i_r = i < a, (i >= a) & (i <= b), i > b
    j_l, j_s, j_r = j < a, (j >= a) & (j <= b), j > b
    same_side = (i_l & j_l) | (i_r & j_r)
    cross = (i_l & j_r) | (i_r & j_l)
    span_back = i_s & (j <= i)
    span_fwd = i_s & j_r
    legal = same_side | cross | span_back | span_fwd
    f = np.zeros((T, T), dtype=np.int64)
    f = np.where(cross, b - a, f)
    f = np.where(span_fwd, b - i - 1, f)
    raw = i - j
    off = raw if l2r else raw - np.sign(raw) * f
    off = np.where(legal, np.clip(off, -max_offset, max_offset), 0)
    return OffsetMatrix(offsets=off.astype(np.int64), legal=legal)


def full_offset_matrix(total_len: int, max_offset: int = DEFAULT_MAX_OFFSET) -> OffsetMatrix:
    """Plain bidirectional encoding: every pair legal, raw offsets."""
    pos = np.arange(total_len)
    raw = np.clip(pos[:, None] - pos[None, :], -max_offset, max_offset)
    return OffsetMatrix(offsets=raw.astype(np.int64), legal=np.ones((total_len, total_len), dtype=bool))


def sinusoid(offsets: np.ndarray, d_model: int, dtype=np.float64) -> np.ndarray:
    """Interleaved sin/cos encoding of integer offsets, shape ``offsets.shape + (d_model,)``."""
    offsets = np.asarray(offsets, dtype=np.float64)
    k = np.arange(0, d_model, 2, dtype=np.float64)
    inv_freq = 1.0 / (10000.0 ** (k / d_model))
    ang = offsets[..., None] * inv_freq
    out = np.empty(offsets.shape + (d_model,), dtype=np.float64)
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)[..., : d_model // 2]
    return out.astype(dtype)


def sinusoid_table(max_offset: int, d_model: int, dtype=np.float64) -> np.ndarray:
    """Rows for offsets ``-max_offset .. max_offset``; row ``d + max_offset`` holds R_d."""
    return sinusoid(np.arange(-max_offset, max_offset + 1), d_model, dtype)
