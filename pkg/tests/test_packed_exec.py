import numpy as np
import pytest
from hypothesis import given, strategies as st

from w4a8lab.errors import OverflowViolation
from w4a8lab.packed_exec import (InstructionCounter, dequant_packed, from_lanes, lane_madd,
                                 lane_xor_msb, lanes, pack_interleaved, replicate,
                                 unpack_interleaved, unpack_nibbles, words_to_bytes)
from w4a8lab.quant_core import dequantize_scalar, reachable_triples


def _pack_by_bits(elems):
    """Bit-level oracle for the interleaved rule: e[j] -> bits 8j..8j+3, e[j+4] -> bits 8j+4..8j+7."""
    word = 0
    for j in range(4):
        for bit in range(4):
            if elems[j] >> bit & 1:
                word |= 1 << (8 * j + bit)
            if elems[j + 4] >> bit & 1:
                word |= 1 << (8 * j + 4 + bit)
    return word


def test_unpack_zero():
    assert unpack_nibbles(0) == (0, 0)


def test_unpack_one_to_eight():
    word = _pack_by_bits(list(range(1, 9)))
    assert word == 0x84736251
    assert int(pack_interleaved(np.arange(1, 9))[0]) == word
    assert unpack_nibbles(word) == (0x04030201, 0x08070605)


def test_unpack_saturated():
    assert unpack_nibbles(0xFFFFFFFF) == (0x0F0F0F0F, 0x0F0F0F0F)


def test_unpack_counts_three():
    c = InstructionCounter()
    unpack_nibbles(0x12345678, c)
    assert c.as_dict() == {"AND": 2, "SHR": 1, "IMAD": 0, "XOR": 0}


@given(st.lists(st.integers(0, 15), min_size=8, max_size=8))
def test_pack_unpack_identity(elems):
    w = pack_interleaved(np.array(elems))
    assert int(w[0]) == _pack_by_bits(elems)
    assert unpack_interleaved(w).tolist() == elems
    lo, hi = unpack_nibbles(int(w[0]))
    assert list(lanes(lo)) + list(lanes(hi)) == elems


def _lane_oracle(w, s, a_word):
    return from_lanes([b * s + a for b, a in zip(lanes(w).tolist(), lanes(a_word).tolist())])


@pytest.mark.parametrize("w,s,a,expected", [
    (0x0F0F0F0F, 16, 0x09090909, 0xF9F9F9F9),
    (0, 5, 0, 0),
    (0x01020304, 2, 0x10101010, 0x12141618),
])
def test_lane_madd_examples(w, s, a, expected):
    assert _lane_oracle(w, s, a) == expected
    assert lane_madd(w, s, a) == expected


def test_lane_madd_checked_names_lane():
    with pytest.raises(OverflowViolation) as info:
        lane_madd(0x000F0000, 16, replicate(250))
    assert info.value.lane == 2
    # unchecked: lane 2 wraps and its carry spills into lane 3
    wrapped = lanes(lane_madd(0x000F0000, 16, replicate(250), checked=False)).tolist()
    assert wrapped == [250, 250, (15 * 16 + 250) & 0xFF, 251]


@pytest.mark.parametrize("w,expected", [(0xF9F9F9F9, 0x79797979), (0, 0x80808080), (0x80808080, 0)])
def test_xor_msb(w, expected):
    assert lane_xor_msb(w) == expected


def test_xor_involution():
    w = np.random.default_rng(0).integers(0, 2**32, size=1000, dtype=np.uint64)
    assert np.array_equal(lane_xor_msb(lane_xor_msb(w)), w.astype(np.uint32))


def test_dequant_all_zero_fragment():
    out, c = dequant_packed(np.zeros(4, np.uint32), 1, 128)
    assert not words_to_bytes(out).any()
    assert c.as_dict() == {"AND": 8, "SHR": 4, "IMAD": 8, "XOR": 8}
    assert c.total == 28


def test_dequant_extremal_fragment():
    frag = np.full(4, 0xFFFFFFFF, np.uint32)
    out, _ = dequant_packed(frag, 16, 9)
    assert (words_to_bytes(out) == 0x79).all()


def test_dequant_random_matches_scalar():
    rng = np.random.default_rng(5)
    q, s, a, _, _ = reachable_triples()
    pick = rng.integers(0, q.size, size=(2000, 4))
    codes = np.minimum(rng.integers(0, 16, size=(2000, 4, 8)), q[pick][..., None])
    words = pack_interleaved(codes.reshape(2000, 32))
    out, c = dequant_packed(words, s[pick], a[pick])
    got = words_to_bytes(out).reshape(2000, 4, 8)
    want = dequantize_scalar(codes, s[pick][..., None], a[pick][..., None] - 128).astype(np.int8).view(np.uint8)
    assert np.array_equal(got, want)
    assert c.total * 8 == 7 * codes.size


def test_lane_isolation_single_lane_exhaustive():
    q, s, a = np.meshgrid(np.arange(16), np.arange(1, 17), np.arange(9, 248), indexing="ij")
    q, s, a = q.ravel(), s.ravel(), a.ravel()
    ok = q * s + a <= 255
    q, s, a = q[ok], s[ok], a[ok]
    for lane in range(4):
        w = q.astype(np.uint32) << np.uint32(8 * lane)
        res = lane_madd(w, s, replicate(a), checked=False)
        got = lanes(res)
        assert np.array_equal(got[:, lane], q * s + a)
        others = [i for i in range(4) if i != lane]
        assert np.array_equal(got[:, others], np.broadcast_to(a[:, None], (a.size, 3)))


def test_lane_isolation_random_vectors():
    rng = np.random.default_rng(6)
    n = 1_000_000
    s = rng.integers(1, 17, size=n)
    a = rng.integers(9, 248, size=n)
    cap = np.minimum(15, (255 - a) // s)
    keep = cap >= 0
    s, a, cap = s[keep], a[keep], cap[keep]
    b = (rng.random((s.size, 4)) * (cap[:, None] + 1)).astype(np.int64)
    w = from_lanes(b)
    res = lane_madd(w, s, replicate(a))
    assert np.array_equal(lanes(res), b * s[:, None] + a[:, None])
