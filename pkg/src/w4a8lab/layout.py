"""Dual-MMA packed weight layout and shared-memory bank analysis.

A 64-row weight tile feeds one warp group (4 warps x 32 threads) issuing
``m64 x k32`` MMAs.  Each thread needs 16 codes per MMA.  The packed layout
stores the 32 codes a thread needs for two consecutive MMAs as one 16-byte
record, so a single 128-bit load fetches them.  Records are ordered
thread-major within a warp, warp-major within the tile, and pair-major
along k.

Within a record the codes form four 32-bit words; word ``2 * mma + r`` holds
row half ``r`` of that MMA (8 codes of one weight row), using the nibble
interleave from :mod:`w4a8lab.packed_exec`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import LayoutError, ValidationError
from .packed_exec import pack_interleaved, unpack_interleaved, words_to_bytes, bytes_to_words


@dataclass(frozen=True)
class FragmentDescriptor:
    warps_per_group: int = 4
    threads_per_warp: int = 32
    mma_m: int = 64
    mma_k: int = 32
    elements_per_thread_per_mma: int = 16
    dual_k_span: int = 64

    def __post_init__(self):
        lhs = self.mma_m * self.mma_k
        rhs = self.warps_per_group * self.threads_per_warp * self.elements_per_thread_per_mma
        if lhs != rhs:
            raise ValidationError(f"descriptor does not partition the MMA tile ({lhs} != {rhs})")
        if self.dual_k_span != 2 * self.mma_k:
            raise ValidationError("dual_k_span must cover two MMA k-slices")

    @property
    def record_bytes(self) -> int:
        # two MMAs worth of 4-bit codes
        return 2 * self.elements_per_thread_per_mma * 4 // 8

    @property
    def threads(self) -> int:
        return self.warps_per_group * self.threads_per_warp

    def as_tuple(self) -> tuple[int, ...]:
        return (self.warps_per_group, self.threads_per_warp, self.mma_m, self.mma_k,
                self.elements_per_thread_per_mma, self.dual_k_span)


DEFAULT_DESCRIPTOR = FragmentDescriptor()


def _check_default(d: FragmentDescriptor):
    # The coordinate formula below is specific to the m64 x k32 8-bit operand.
    if d != DEFAULT_DESCRIPTOR:
        raise LayoutError(f"no coordinate mapping implemented for {d}")


def fragment_coords(warp: int, thread: int, mma_index: int,
                    d: FragmentDescriptor = DEFAULT_DESCRIPTOR) -> list[tuple[int, int]]:
    """Logical (row, col) of the 16 codes one thread consumes in one MMA.

    Ordered by row half ``r``, then column block ``b``, then offset ``j``::

        row = 16 * warp + 8 * r + thread // 4
        col = 32 * mma_index + 16 * b + 4 * (thread % 4) + j
    """
    _check_default(d)
    if not 0 <= warp < d.warps_per_group:
        raise LayoutError(f"warp {warp} out of range")
    if not 0 <= thread < d.threads_per_warp:
        raise LayoutError(f"thread {thread} out of range")
    if mma_index < 0:
        raise LayoutError(f"mma index {mma_index} out of range")
    coords = []
    for r in range(2):
        row = 16 * warp + 8 * r + thread // 4
        for b in range(2):
            for j in range(4):
                coords.append((row, d.mma_k * mma_index + 16 * b + 4 * (thread % 4) + j))
    return coords


@lru_cache(maxsize=None)
def _pair_coords(d: FragmentDescriptor = DEFAULT_DESCRIPTOR):
    """(rows, cols) of every code in one dual-MMA span, in stream order.

    Shape ``(warps * threads, 32)``: one row per record, 32 codes per record.
    """
    rows = np.empty((d.threads, 2 * d.elements_per_thread_per_mma), dtype=np.int64)
    cols = np.empty_like(rows)
    for warp in range(d.warps_per_group):
        for thread in range(d.threads_per_warp):
            rec = warp * d.threads_per_warp + thread
            cc = fragment_coords(warp, thread, 0, d) + fragment_coords(warp, thread, 1, d)
            rows[rec] = [c[0] for c in cc]
            cols[rec] = [c[1] for c in cc]
    rows.flags.writeable = False
    cols.flags.writeable = False
    return rows, cols


def stream_coords(k_t: int, d: FragmentDescriptor = DEFAULT_DESCRIPTOR):
    """(rows, cols) for every code of a packed ``mma_m x k_t`` tile.

    Shape ``(pairs, records, 32)``.
    """
    if k_t % d.dual_k_span:
        raise LayoutError(f"tile k extent {k_t} is not a multiple of {d.dual_k_span}")
    rows, cols = _pair_coords(d)
    pairs = k_t // d.dual_k_span
    offs = (np.arange(pairs) * d.dual_k_span)[:, None, None]
    return np.broadcast_to(rows, (pairs,) + rows.shape), cols[None] + offs


@dataclass
class PackedTile:
    """Byte stream of one packed ``mma_m x k_t`` tile."""

    data: np.ndarray
    k_t: int
    descriptor: FragmentDescriptor = field(default=DEFAULT_DESCRIPTOR)

    @property
    def pairs(self) -> int:
        return self.k_t // self.descriptor.dual_k_span

    def record_offset(self, pair: int, warp: int, thread: int) -> int:
        d = self.descriptor
        rb = d.record_bytes
        return ((pair * d.warps_per_group + warp) * d.threads_per_warp + thread) * rb

    def warp_offsets(self, pair: int, warp: int) -> np.ndarray:
        """Byte offset of each thread's record for one warp block."""
        d = self.descriptor
        return self.record_offset(pair, warp, 0) + np.arange(d.threads_per_warp) * d.record_bytes

    def words(self) -> np.ndarray:
        """Records as 32-bit words, shape ``(pairs, records, 4)``."""
        return bytes_to_words(self.data.reshape(self.pairs, self.descriptor.threads, -1))


def pack_dual_mma(tile, d: FragmentDescriptor = DEFAULT_DESCRIPTOR) -> PackedTile:
    """Reorder a logical ``64 x k_t`` tile of 4-bit codes into the packed stream."""
    tile = np.asarray(tile)
    if tile.ndim != 2 or tile.shape[0] != d.mma_m:
        raise LayoutError(f"expected a {d.mma_m} x K tile, got shape {tile.shape}")
    k_t = tile.shape[1]
    rows, cols = stream_coords(k_t, d)
    codes = tile[rows, cols]
    words = pack_interleaved(codes)
    return PackedTile(words_to_bytes(words).reshape(-1).copy(), k_t, d)


def unpack_dual_mma(p: PackedTile, d: FragmentDescriptor | None = None) -> np.ndarray:
    """Inverse of :func:`pack_dual_mma`."""
    d = d or p.descriptor
    expected = d.mma_m * p.k_t // 2
    if p.data.size != expected:
        raise LayoutError(f"packed tile has {p.data.size} bytes, expected {expected}")
    rows, cols = stream_coords(p.k_t, d)
    codes = unpack_interleaved(bytes_to_words(p.data.reshape(rows.shape[0], rows.shape[1], -1)))
    tile = np.empty((d.mma_m, p.k_t), dtype=np.uint8)
    tile[rows, cols] = codes
    return tile


def pack_matrix(codes, d: FragmentDescriptor = DEFAULT_DESCRIPTOR) -> np.ndarray:
    """Pack an ``n x k`` code matrix tile by tile (64-row tiles, row-tile major)."""
    codes = np.asarray(codes)
    n, k = codes.shape
    if n % d.mma_m:
        raise LayoutError(f"row count {n} is not a multiple of {d.mma_m}")
    if k % d.dual_k_span:
        raise LayoutError(f"k={k} is not a multiple of {d.dual_k_span}")
    return np.concatenate([pack_dual_mma(codes[i:i + d.mma_m], d).data
                           for i in range(0, n, d.mma_m)])


def unpack_matrix(data, n: int, k: int, d: FragmentDescriptor = DEFAULT_DESCRIPTOR) -> np.ndarray:
    data = np.asarray(data, dtype=np.uint8)
    tile_bytes = d.mma_m * k // 2
    if n % d.mma_m or data.size != n * k // 2:
        raise LayoutError(f"payload of {data.size} bytes does not match {n} x {k}")
    return np.concatenate([unpack_dual_mma(PackedTile(data[i * tile_bytes:(i + 1) * tile_bytes], k, d))
                           for i in range(n // d.mma_m)])


def pair_words(data, n: int, k: int, k0: int, k1: int,
               d: FragmentDescriptor = DEFAULT_DESCRIPTOR) -> np.ndarray:
    """Words of every record in k-range ``[k0, k1)``, shape ``(n/64, pairs, records, 4)``."""
    span = d.dual_k_span
    if k0 % span or k1 % span:
        raise LayoutError(f"k-range [{k0}, {k1}) not aligned to {span}")
    data = np.asarray(data, dtype=np.uint8).reshape(n // d.mma_m, k // span, d.threads, -1)
    return bytes_to_words(data[:, k0 // span:k1 // span])


@dataclass
class ConflictReport:
    banks: int
    phase_size: int
    phases: list[dict]

    @property
    def conflicts(self) -> int:
        """Extra serialized wavefronts summed over phases (0 means conflict-free)."""
        return sum(p["ways"] - 1 for p in self.phases)

    @property
    def conflict_free(self) -> bool:
        return self.conflicts == 0

    def as_dict(self) -> dict:
        return {"banks": self.banks, "phase_size": self.phase_size,
                "conflicts": self.conflicts, "conflict_free": self.conflict_free,
                "phases": self.phases}


def check_bank_conflicts(p, banks: int = 32, bank_width_bytes: int = 4,
                         phase_size: int = 8, access_bytes: int = 16) -> ConflictReport:
    """Model 128-bit shared-memory reads of one warp and count bank conflicts.

    ``p`` is either a :class:`PackedTile` (every warp block of every pair is
    checked) or a sequence of per-thread byte offsets for a single warp.
    Each access touches ``access_bytes / bank_width_bytes`` consecutive banks;
    threads are served ``phase_size`` at a time.  Accesses are not merged
    even when addresses coincide, so ``ways`` is the largest number of
    accesses landing on one bank within a phase.
    """
    if isinstance(p, PackedTile):
        groups = [p.warp_offsets(pair, warp) for pair in range(p.pairs)
                  for warp in range(p.descriptor.warps_per_group)]
    else:
        groups = [np.asarray(p, dtype=np.int64)]
    words_per_access = access_bytes // bank_width_bytes
    phases = []
    for g, offsets in enumerate(groups):
        for start in range(0, len(offsets), phase_size):
            chunk = offsets[start:start + phase_size]
            first = np.asarray(chunk) // bank_width_bytes
            touched = (first[:, None] + np.arange(words_per_access)) % banks
            hits = np.bincount(touched.ravel(), minlength=banks)
            phases.append({"group": g, "phase": start // phase_size,
                           "distinct_banks": int((hits > 0).sum()),
                           "ways": int(hits.max())})
    return ConflictReport(banks, phase_size, phases)
