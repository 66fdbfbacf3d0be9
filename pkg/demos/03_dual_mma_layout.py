"""
The dual-MMA packed layout
==========================

Each thread of a 128-thread warp group consumes 16 codes per 64x32 MMA.
Storing the codes for two consecutive MMAs side by side gives one 16-byte
record per thread: one 128-bit shared-memory load, and eight consecutive
threads cover all 32 banks exactly once.
"""

import numpy as np

from w4a8lab import layout

for warp, thread, mma in [(0, 0, 0), (0, 1, 0), (3, 31, 1)]:
    cc = layout.fragment_coords(warp, thread, mma)
    rows = sorted({r for r, _ in cc})
    cols = sorted({c for _, c in cc})
    print(f"warp {warp} thread {thread:2d} mma {mma}: rows {rows} cols {cols}")

# Pack a tile whose values encode their coordinates and decode thread 0's record.
r, c = np.indices((64, 128))
tile = ((r + c) % 16).astype(np.uint8)
packed = layout.pack_dual_mma(tile)
print("\ntile 64x128 ->", packed.data.size, "bytes,", packed.pairs, "MMA pairs")
record = layout.unpack_interleaved(layout.bytes_to_words(packed.data[:16]))
print("thread 0 record:", record.tolist())

assert np.array_equal(layout.unpack_dual_mma(packed), tile)

# Bank model: 32 banks of 4 bytes, 16-byte accesses, 8 threads per phase.
ok = layout.check_bank_conflicts(packed)
print("\npacked layout : conflicts =", ok.conflicts, "over", len(ok.phases), "phases")
same = layout.check_bank_conflicts(np.zeros(32, np.int64))
print("all offset 0  : ways per phase =", [p["ways"] for p in same.phases])
strided = layout.check_bank_conflicts(np.arange(32) * 128)
print("128-B stride  : ways per phase =", [p["ways"] for p in strided.phases])
