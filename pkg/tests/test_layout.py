import numpy as np
import pytest

from w4a8lab.errors import LayoutError
from w4a8lab.layout import (DEFAULT_DESCRIPTOR, PackedTile, check_bank_conflicts, fragment_coords,
                            pack_dual_mma, pack_matrix, stream_coords, unpack_dual_mma, unpack_matrix)
from w4a8lab.packed_exec import bytes_to_words, unpack_interleaved


def test_descriptor_defaults():
    d = DEFAULT_DESCRIPTOR
    assert d.record_bytes == 16 and d.threads == 128


def test_thread_zero_coords():
    cc = fragment_coords(0, 0, 0)
    assert len(cc) == 16
    assert {r for r, _ in cc} == {0, 8}
    assert sorted({c for _, c in cc}) == [0, 1, 2, 3, 16, 17, 18, 19]
    # four contiguous columns per (r, b) quartet
    assert cc[:4] == [(0, 0), (0, 1), (0, 2), (0, 3)]


def test_last_thread_coords():
    cc = fragment_coords(3, 31, 1)
    assert {r for r, _ in cc} == {55, 63}
    assert sorted({c for _, c in cc}) == [44, 45, 46, 47, 60, 61, 62, 63]


def test_partition_one_mma():
    seen = np.zeros((64, 32), np.int64)
    for warp in range(4):
        for thread in range(32):
            for r, c in fragment_coords(warp, thread, 0):
                seen[r, c] += 1
    assert (seen == 1).all()


@pytest.mark.parametrize("args", [(4, 0, 0), (0, 32, 0), (0, 0, -1)])
def test_coords_out_of_range(args):
    with pytest.raises(LayoutError):
        fragment_coords(*args)


@pytest.mark.parametrize("k_t", [64, 128, 256])
def test_bijection_and_coverage(k_t):
    rng = np.random.default_rng(k_t)
    for _ in range(20):
        tile = rng.integers(0, 16, size=(64, k_t), dtype=np.uint8)
        p = pack_dual_mma(tile)
        assert p.data.size == 64 * k_t // 2
        assert np.array_equal(unpack_dual_mma(p), tile)
    rows, cols = stream_coords(k_t)
    hits = np.zeros((64, k_t), np.int64)
    np.add.at(hits, (rows, cols), 1)
    assert (hits == 1).all()


def test_coordinate_oracle_record():
    r, c = np.indices((64, 128))
    tile = ((r + c) % 16).astype(np.uint8)
    p = pack_dual_mma(tile)
    record = unpack_interleaved(bytes_to_words(p.data[:16]))
    expected = [(rr + cc) % 16 for rr, cc in fragment_coords(0, 0, 0) + fragment_coords(0, 0, 1)]
    assert record.tolist() == expected


def test_record_words_are_single_row_and_group():
    d = DEFAULT_DESCRIPTOR
    rows, cols = stream_coords(256)
    # word w of a record covers codes 8w..8w+7
    r = rows.reshape(rows.shape[0], rows.shape[1], 4, 8)
    c = cols.reshape(r.shape)
    assert (r == r[..., :1]).all()
    # every record stays inside one 64-wide k span, hence one quantization group
    g = cols // d.dual_k_span
    assert (g == g[..., :1]).all()
    assert (c // 64 == c[..., :1] // 64).all()


def test_all_zero_tile():
    p = pack_dual_mma(np.zeros((64, 128), np.uint8))
    assert p.data.size == 64 * 128 // 2 and not p.data.any()


def test_misaligned_rejected():
    with pytest.raises(LayoutError):
        pack_dual_mma(np.zeros((64, 96), np.uint8))
    with pytest.raises(LayoutError):
        pack_dual_mma(np.zeros((32, 64), np.uint8))
    with pytest.raises(LayoutError):
        unpack_dual_mma(PackedTile(np.zeros(10, np.uint8), 64))


def test_matrix_round_trip():
    codes = np.random.default_rng(1).integers(0, 16, size=(192, 128), dtype=np.uint8)
    assert np.array_equal(unpack_matrix(pack_matrix(codes), 192, 128), codes)


def test_records_contiguous():
    p = pack_dual_mma(np.zeros((64, 128), np.uint8))
    for pair in range(p.pairs):
        for warp in range(4):
            offs = p.warp_offsets(pair, warp)
            assert (np.diff(offs) == 16).all()
            assert offs[0] == (pair * 4 + warp) * 32 * 16


def test_bank_conflicts_default_layout():
    rep = check_bank_conflicts(pack_dual_mma(np.zeros((64, 256), np.uint8)))
    assert rep.conflict_free
    assert all(ph["distinct_banks"] == 32 and ph["ways"] == 1 for ph in rep.phases)
    assert len(rep.phases) == 4 * 4 * 4


def test_bank_conflicts_all_offset_zero():
    rep = check_bank_conflicts(np.zeros(32, np.int64))
    assert all(ph["ways"] == 8 and ph["distinct_banks"] == 4 for ph in rep.phases)
    assert not rep.conflict_free


def test_bank_conflicts_128_byte_stride():
    rep = check_bank_conflicts(np.arange(32) * 128)
    # 128 bytes = 32 banks, so every thread lands on banks 0..3
    assert all(ph["ways"] == 8 and ph["distinct_banks"] == 4 for ph in rep.phases)
