"""Two-level W4 weight quantization and its scalar reference dequantizers.

Level one maps float weights to INT8 with a symmetric per-channel scale,
restricted to the protective range [-119, 119].  Level two shifts each
group into the unsigned domain and quantizes it to 4-bit codes::

    q_u8 = q_i8 - min(group)
    s_u8 = max(1, round(max(q_u8) / 15))
    q_u4 = clamp(round(q_u8 / s_u8), 0, 15)
    a    = 128 + min(group)

Dequantization back to INT8 is ``(q_u4 * s_u8 + a) ^ 0x80`` in pure 8-bit
unsigned arithmetic; for every reachable parameter set the intermediate
never exceeds 255.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import OverflowViolation, ValidationError
from .tensor_io import Layout, QuantizedWeightBundle, pack_u4

PROTECTIVE_MAX = 119
CODE_MAX = 15


def round_half_away(x):
    """Round to nearest, ties away from zero."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


class GroupQuantParams(NamedTuple):
    """Per-group parameters, each shaped ``(n, k // group_size)``."""

    s_u8: np.ndarray
    a: np.ndarray
    min_qi8: np.ndarray


def _check_finite(W, what="input"):
    bad = np.argwhere(~np.isfinite(W))
    if bad.size:
        raise ValidationError(f"non-finite {what} at {tuple(int(i) for i in bad[0])}")


def quantize_first_level(W):
    """Symmetric per-row INT8 quantization into [-119, 119].

    Returns ``(q_i8, s_i8)``: an int8 matrix and a float32 scale per row.
    All-zero rows get scale 1.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ValidationError(f"expected a 2-D weight matrix, got shape {W.shape}")
    _check_finite(W, "weight")
    absmax = np.abs(W).max(axis=1)
    scale = np.where(absmax > 0, absmax / PROTECTIVE_MAX, 1.0)
    q = np.clip(round_half_away(W / scale[:, None]), -PROTECTIVE_MAX, PROTECTIVE_MAX)
    return q.astype(np.int8), scale.astype(np.float32)


def quantize_second_level(q_i8, group_size: int):
    """Group-wise INT8 -> UINT4 shift-and-scale.

    Returns ``(codes, params)`` where ``codes`` is an unpacked uint8 matrix of
    values in [0, 15] with the input's shape.
    """
    q = np.asarray(q_i8)
    if q.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got shape {q.shape}")
    n, k = q.shape
    if group_size < 1 or k % group_size:
        raise ValidationError(f"k={k} is not a multiple of group_size={group_size}")
    q = q.astype(np.int64)
    bad = np.argwhere(np.abs(q) > PROTECTIVE_MAX)
    if bad.size:
        i, j = bad[0]
        raise ValidationError(f"value {q[i, j]} at ({i}, {j}) outside the protective range")
    g = q.reshape(n, k // group_size, group_size)
    gmin = g.min(axis=2)
    shifted = g - gmin[..., None]
    span = shifted.max(axis=2)
    s = np.maximum(1, round_half_away(span / CODE_MAX)).astype(np.int64)
    codes = np.clip(round_half_away(shifted / s[..., None]), 0, CODE_MAX)
    params = GroupQuantParams(s.astype(np.uint8), (128 + gmin).astype(np.uint8), gmin.astype(np.int8))
    return codes.reshape(n, k).astype(np.uint8), params


def dequantize_scalar(q_u4, s_u8, min_qi8):
    """Wide-arithmetic reconstruction ``q_u4 * s_u8 + min_qi8``.

    The ground truth for the 8-bit path.  Values are returned as int16 so an
    out-of-range result from invalid parameters is visible rather than
    wrapped; for reachable parameters the result always fits in int8.
    """
    q = np.asarray(q_u4, dtype=np.int16)
    out = q * np.asarray(s_u8, dtype=np.int16) + np.asarray(min_qi8, dtype=np.int16)
    return int(out) if out.ndim == 0 else out


def dequantize_lane(q_u4, s_u8, a, checked: bool = True):
    """8-bit unsigned reconstruction ``(q_u4 * s_u8 + a) ^ 0x80``.

    The returned uint8 bit pattern is the two's-complement encoding of the
    INT8 weight.  With ``checked`` an intermediate above 255 raises
    :class:`OverflowViolation`; otherwise it wraps modulo 256 as 8-bit
    hardware would.
    """
    q = np.asarray(q_u4, dtype=np.int32)
    s = np.asarray(s_u8, dtype=np.int32)
    a = np.asarray(a, dtype=np.int32)
    if np.any((s < 1) | (s > 16)):
        raise ValidationError("group scale must lie in [1, 16]")
    t = q * s + a
    if checked and np.any(t > 0xFF):
        idx = np.unravel_index(int(np.argmax(t > 0xFF)), t.shape) if t.ndim else ()
        raise OverflowViolation(f"q*s + a = {int(t[idx])} exceeds 255 at {idx}")
    out = ((t & 0xFF) ^ 0x80).astype(np.uint8)
    return int(out) if out.ndim == 0 else out


def as_int8(bits):
    """Reinterpret uint8 bit patterns as int8."""
    return np.asarray(bits, dtype=np.uint8).view(np.int8)


def epilogue_dequantize(acc, s_i8, act_scale):
    """Float reconstruction of an integer accumulator: ``acc * s_i8 * act_scale``."""
    out = (np.asarray(acc, dtype=np.float32) * np.asarray(s_i8, dtype=np.float32)
           * np.asarray(act_scale, dtype=np.float32))
    return out[()] if out.ndim == 0 else out


def quantize_weights(W, group_size: int = 64, layout: Layout = Layout.PLAIN_ROW_MAJOR) -> QuantizedWeightBundle:
    """Run both levels and package the result."""
    q_i8, s_i8 = quantize_first_level(W)
    codes, params = quantize_second_level(q_i8, group_size)
    n, k = codes.shape
    bundle = QuantizedWeightBundle(n, k, group_size, Layout.PLAIN_ROW_MAJOR, pack_u4(codes),
                                   params.s_u8, params.a, s_i8)
    return bundle.with_layout(layout)


def bundle_group_params(b: QuantizedWeightBundle):
    """Expand per-group ``(s_u8, a)`` to per-element ``n x k`` arrays."""
    s = np.repeat(b.group_scales, b.group_size, axis=1)
    a = np.repeat(b.group_offsets, b.group_size, axis=1)
    return s, a


def dequantize_bundle(b: QuantizedWeightBundle, k0: int = 0, k1: int | None = None) -> np.ndarray:
    """Scalar-path INT8 reconstruction of columns ``[k0, k1)`` of a bundle."""
    k1 = b.k if k1 is None else k1
    codes = b.codes()[:, k0:k1]
    s, a = bundle_group_params(b)
    min_qi8 = a[:, k0:k1].astype(np.int16) - 128
    out = dequantize_scalar(codes, s[:, k0:k1], min_qi8)
    return np.asarray(out).astype(np.int8)


@dataclass
class VerificationReport:
    group_ranges: int = 0
    reachable_points: int = 0
    distinct_triples: int = 0
    violations: list = field(default_factory=list)
    chain_violations: list = field(default_factory=list)
    raw_points: int = 0
    raw_overflows: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations and not self.chain_violations

    def as_dict(self) -> dict:
        return {"group_ranges": self.group_ranges, "reachable_points": self.reachable_points,
                "distinct_triples": self.distinct_triples,
                "violations": len(self.violations), "chain_violations": len(self.chain_violations),
                "counterexamples": [list(v) for v in (self.violations + self.chain_violations)[:10]],
                "raw_points": self.raw_points, "raw_overflows": self.raw_overflows, "ok": self.ok}


def reachable_triples(subset=None):
    """Enumerate every ``(q_u4, s_u8, a, group_max)`` reachable by level two.

    For each group range ``(lo, hi)`` the codes reachable are those of all
    integer values in ``[lo, hi]``.  ``subset`` optionally indexes the
    ranges.  Returns ``(q, s, a, hi, n_ranges)``.
    """
    lo, hi = np.meshgrid(np.arange(-PROTECTIVE_MAX, PROTECTIVE_MAX + 1),
                         np.arange(-PROTECTIVE_MAX, PROTECTIVE_MAX + 1), indexing="ij")
    keep = lo <= hi
    lo, hi = lo[keep], hi[keep]
    if subset is not None:
        lo, hi = lo[subset], hi[subset]
    span = hi - lo
    s = np.maximum(1, round_half_away(span / CODE_MAX)).astype(np.int64)
    # every value v in [lo, hi] as an offset q_u8 = v - lo in [0, span]
    offs = np.arange(2 * PROTECTIVE_MAX + 1)
    valid = offs[None, :] <= span[:, None]
    codes = np.clip(round_half_away(offs[None, :] / s[:, None]), 0, CODE_MAX).astype(np.int64)
    rows = np.nonzero(valid)
    return (codes[rows], s[rows[0]], (128 + lo)[rows[0]], hi[rows[0]], lo.size)


def check_lane_points(q_u4, s_u8, a):
    """Raw-mode check: every point with ``q*s + a > 255`` as a list of tuples."""
    q, s, a = (np.atleast_1d(np.asarray(x, dtype=np.int64)) for x in (q_u4, s_u8, a))
    q, s, a = np.broadcast_arrays(q, s, a)
    bad = q * s + a > 0xFF
    return [tuple(int(v) for v in t) for t in zip(q[bad], s[bad], a[bad])]


def verify_overflow_free(exhaustive: bool = True, samples: int = 2000, seed: int = 0) -> VerificationReport:
    """Check the 8-bit bound on every parameter set level two can produce.

    With ``exhaustive`` all group ranges ``lo <= hi`` in [-119, 119] are
    covered; otherwise ``samples`` ranges are drawn at random.  Both the
    direct bound ``q*s + a <= 255`` and the tighter chain bound
    ``q*s + a <= max(group) + 8 + 128`` are asserted.  The raw grid of all
    ``16 x 16 x 239`` lane points is scanned as well; its overflows are
    counted but are not violations because those points are unreachable.
    """
    idx = None
    if not exhaustive:
        total = (2 * PROTECTIVE_MAX + 1) * (2 * PROTECTIVE_MAX + 2) // 2
        idx = np.sort(np.random.default_rng(seed).choice(total, size=min(samples, total), replace=False))
    q, s, a, hi, ranges = reachable_triples(idx)
    t = q * s + a
    report = VerificationReport(group_ranges=int(ranges), reachable_points=int(q.size))
    report.distinct_triples = int(np.unique((q * 17 + s) * 256 + a).size)
    bad = t > 0xFF
    report.violations = [tuple(int(v) for v in x) for x in zip(q[bad], s[bad], a[bad])]
    chain = t > hi + 8 + 128
    report.chain_violations = [tuple(int(v) for v in x) for x in zip(q[chain], s[chain], a[chain], hi[chain])]
    rq, rs, ra = np.meshgrid(np.arange(16), np.arange(1, 17), np.arange(9, 248), indexing="ij")
    report.raw_points = int(rq.size)
    report.raw_overflows = int((rq * rs + ra > 0xFF).sum())
    return report
