"""Register-word emulation of packed UINT4 -> INT8 dequantization.

A 32-bit word is viewed as four byte lanes ``b0..b3`` (``b0`` least
significant).  Eight 4-bit codes live in one word using the interleaved
convention: byte ``j`` holds element ``j`` in its low nibble and element
``j + 4`` in its high nibble.  With that convention a mask and a
shift-then-mask land elements 0..3 and 4..7 in lane order, so

    unpack      AND, SHR, AND                 3 instructions / 8 elements
    per 4 elems IMAD (w * s + a), XOR 0x80    2 instructions / 4 elements

for a total of 7 instructions per 8 elements.

Every function accepts a Python int or a numpy integer array of words and
is vectorised over the array.  An optional :class:`InstructionCounter`
records one instruction per word processed.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from .errors import OverflowViolation, ValidationError

NIBBLE_MASK = 0x0F0F0F0F
MSB_MASK = 0x80808080
LANE_ONES = 0x01010101
WORD_MASK = 0xFFFFFFFF

OPCODES = ("AND", "SHR", "IMAD", "XOR")


class InstructionCounter:
    """Tally of synthetic opcodes; each opcode costs one instruction."""

    def __init__(self):
        self.counts = Counter({op: 0 for op in OPCODES})

    def add(self, op: str, n: int = 1) -> None:
        if op not in OPCODES:
            raise ValueError(f"unknown opcode {op!r}")
        self.counts[op] += int(n)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def as_dict(self) -> dict[str, int]:
        return {op: self.counts[op] for op in OPCODES}

    def __repr__(self):
        inner = ", ".join(f"{op}={self.counts[op]}" for op in OPCODES)
        return f"InstructionCounter({inner})"


def _words(w):
    if isinstance(w, (int, np.integer)):
        return np.uint64(int(w) & WORD_MASK), True
    arr = np.asarray(w)
    return arr.astype(np.uint64) & np.uint64(WORD_MASK), False


def _out(arr, scalar):
    arr = arr & np.uint64(WORD_MASK)
    return int(arr) if scalar else arr.astype(np.uint32)


def _count(counter, op, arr):
    if counter is not None:
        counter.add(op, np.size(arr))


def lanes(w) -> np.ndarray:
    """Split word(s) into byte lanes; result has a trailing axis of 4."""
    arr, _ = _words(w)
    shifts = np.array([0, 8, 16, 24], dtype=np.uint64)
    return ((arr[..., None] >> shifts) & np.uint64(0xFF)).astype(np.uint8)


def from_lanes(b) -> np.ndarray | int:
    """Inverse of :func:`lanes`."""
    b = np.asarray(b, dtype=np.uint64)
    shifts = np.array([0, 8, 16, 24], dtype=np.uint64)
    out = (b << shifts).sum(axis=-1, dtype=np.uint64)
    return int(out) if out.ndim == 0 else out.astype(np.uint32)


def replicate(a) -> np.ndarray | int:
    """Broadcast an 8-bit value into all four byte lanes."""
    if isinstance(a, (int, np.integer)):
        return (int(a) & 0xFF) * LANE_ONES
    return (np.asarray(a).astype(np.uint32) & np.uint32(0xFF)) * np.uint32(LANE_ONES)


def pack_interleaved(codes) -> np.ndarray:
    """Pack 4-bit codes (last axis a multiple of 8) into 32-bit words.

    Element ``8i + j`` goes to the low nibble of byte ``j`` of word ``i`` and
    element ``8i + j + 4`` to the high nibble of the same byte.
    """
    c = np.asarray(codes)
    if c.shape[-1] % 8:
        raise ValidationError("code count must be a multiple of 8")
    if c.size and (c.min() < 0 or c.max() > 15):
        raise ValidationError("codes must lie in [0, 15]")
    c = c.astype(np.uint32).reshape(*c.shape[:-1], -1, 2, 4)
    byte = c[..., 0, :] | (c[..., 1, :] << np.uint32(4))
    shifts = np.array([0, 8, 16, 24], dtype=np.uint32)
    return (byte << shifts).sum(axis=-1, dtype=np.uint32)


def unpack_interleaved(words) -> np.ndarray:
    """Inverse of :func:`pack_interleaved`; returns uint8 codes."""
    b = lanes(words)
    lo = b & 0x0F
    hi = b >> 4
    out = np.concatenate([lo, hi], axis=-1)
    return out.reshape(*out.shape[:-2], -1)


def unpack_nibbles(w, counter: InstructionCounter | None = None):
    """Expand 8 nibbles into two words of byte lanes: ``(w & M, (w >> 4) & M)``."""
    arr, scalar = _words(w)
    m = np.uint64(NIBBLE_MASK)
    lo = arr & m
    _count(counter, "AND", arr)
    shifted = arr >> np.uint64(4)
    _count(counter, "SHR", arr)
    hi = shifted & m
    _count(counter, "AND", arr)
    return _out(lo, scalar), _out(hi, scalar)


def lane_madd(w, s, a_word, counter: InstructionCounter | None = None, checked: bool = True):
    """One 32-bit IMAD: ``w * s + a_word`` truncated to 32 bits.

    When each lane of ``w`` is at most 15, ``s <= 16`` and every lane sum stays
    at or below 255, no carry crosses a lane boundary, so byte lane ``i`` of
    the result is exactly ``b_i * s + a``.  ``checked`` verifies that
    precondition lane by lane and raises :class:`OverflowViolation` naming the
    first offending lane.
    """
    arr, scalar = _words(w)
    s_arr = np.asarray(s).astype(np.uint64)
    a_arr, _ = _words(a_word)
    if checked:
        per_lane = lanes(arr).astype(np.int64) * np.asarray(s, dtype=np.int64)[..., None] \
            + lanes(a_arr).astype(np.int64)
        bad = per_lane > 0xFF
        if bad.any():
            lane = int(np.argwhere(bad)[0][-1])
            raise OverflowViolation(
                f"lane {lane}: b*s + a = {int(per_lane[bad][0])} exceeds 255", lane=lane
            )
    res = arr * s_arr + a_arr
    _count(counter, "IMAD", np.broadcast_to(arr, res.shape))
    return _out(res, scalar)


def lane_xor_msb(w, counter: InstructionCounter | None = None):
    """Flip the top bit of every byte lane (``w ^ 0x80808080``)."""
    arr, scalar = _words(w)
    res = arr ^ np.uint64(MSB_MASK)
    _count(counter, "XOR", arr)
    return _out(res, scalar)


def dequant_packed(frag, s, a, counter: InstructionCounter | None = None, checked: bool = True):
    """Dequantize packed UINT4 words to INT8 bit patterns.

    ``frag`` has a trailing axis of input words (4 for one thread's dual-MMA
    record).  ``s`` and ``a`` broadcast against ``frag``: pass scalars for a
    single group or arrays shaped like ``frag`` for one group per word.

    Returns ``(out, counter)`` where ``out`` has twice as many words along the
    last axis; output word ``2i`` holds elements ``8i..8i+3`` of input word
    ``i`` and word ``2i + 1`` holds ``8i+4..8i+7``.
    """
    if counter is None:
        counter = InstructionCounter()
    frag = np.asarray(frag, dtype=np.uint32)
    s = np.broadcast_to(np.asarray(s, dtype=np.int64), frag.shape)
    a = np.broadcast_to(np.asarray(a, dtype=np.int64), frag.shape)
    if s.size and (s.min() < 1 or s.max() > 16):
        raise ValidationError("group scale must lie in [1, 16]")
    a_word = replicate(a.astype(np.uint32))
    lo, hi = unpack_nibbles(frag, counter)
    lo = lane_xor_msb(lane_madd(lo, s, a_word, counter, checked), counter)
    hi = lane_xor_msb(lane_madd(hi, s, a_word, counter, checked), counter)
    out = np.stack([lo, hi], axis=-1).reshape(*frag.shape[:-1], -1)
    return out.astype(np.uint32), counter


def words_to_bytes(words) -> np.ndarray:
    """Little-endian byte view of 32-bit words (last axis grows by 4x)."""
    w = np.ascontiguousarray(np.asarray(words, dtype="<u4"))
    return w.view(np.uint8).reshape(*w.shape[:-1], -1)


def bytes_to_words(b) -> np.ndarray:
    b = np.ascontiguousarray(np.asarray(b, dtype=np.uint8))
    if b.shape[-1] % 4:
        raise ValidationError("byte count must be a multiple of 4")
    return b.view("<u4").reshape(*b.shape[:-1], -1).astype(np.uint32)
