"""
Dequantizing eight weights with seven word instructions
=======================================================

A 32-bit register holds eight 4-bit codes.  Two masks and a shift split
them into two words of four byte lanes, one multiply-add per word applies
(s, a) to all four lanes at once, and one XOR per word flips the sign bit.
"""

import numpy as np

from w4a8lab import packed_exec as px

codes = np.arange(1, 9)
word = int(px.pack_interleaved(codes)[0])
print(f"codes {codes.tolist()} packed -> 0x{word:08X}")
print("  byte j holds code j (low nibble) and code j+4 (high nibble)")

counter = px.InstructionCounter()
lo, hi = px.unpack_nibbles(word, counter)
print(f"unpacked words       : 0x{lo:08X} 0x{hi:08X}")

s, a = 15, 24
a_word = px.replicate(a)
lo = px.lane_xor_msb(px.lane_madd(lo, s, a_word, counter=counter), counter)
hi = px.lane_xor_msb(px.lane_madd(hi, s, a_word, counter=counter), counter)
print("int8 results         :", px.lanes(lo).astype(np.uint8).view(np.int8).tolist(),
      px.lanes(hi).astype(np.uint8).view(np.int8).tolist())
print("expected             :", (codes * s + a - 128).tolist())
print("instructions         :", counter.as_dict(), "total", counter.total)

# With s <= 16 and a + 15*s <= 255 no lane carries into its neighbour, so a
# single 32-bit multiply-add is exact for all four lanes.  Break the bound
# and the checked mode points at the lane that would overflow.
try:
    px.lane_madd(0x000F0000, 16, px.replicate(250))
except px.OverflowViolation as exc:
    print("overflow caught      :", exc)

# A whole fragment: four words, 32 codes, 28 instructions.
frag = px.pack_interleaved(np.random.default_rng(1).integers(0, 16, 32))
out, c = px.dequant_packed(frag, 16, 9)
print("fragment instructions:", c.total, "for 32 elements ->", c.total * 8 / 32, "per 8")
