"""
Two-level weight quantization and the 8-bit overflow argument
==============================================================

Float weights go to INT8 per output channel, then each group of 64 INT8
values is shifted into the unsigned range and squeezed to 4 bits.  This
script walks one group through both levels and then checks the 8-bit bound
for every parameter set the quantizer can ever emit.
"""

import numpy as np

from w4a8lab import quant_core as qc

rng = np.random.default_rng(0)

# A single output channel of 64 weights with one outlier.
w = rng.standard_normal((1, 64))
w[0, 10] = 4.0

# Level one: symmetric INT8, restricted to [-119, 119] rather than [-127, 127].
q_i8, s_i8 = qc.quantize_first_level(w)
print("channel scale     :", s_i8[0])
print("int8 range        :", q_i8.min(), "..", q_i8.max())

# Level two: shift by the group minimum, then divide by an integer scale.
codes, params = qc.quantize_second_level(q_i8, group_size=64)
print("group scale s_u8  :", params.s_u8[0, 0])
print("group offset a    :", params.a[0, 0], "(= 128 + min", params.min_qi8[0, 0], ")")
print("first codes       :", codes[0, :12])

# Reconstruct through the 8-bit path: (q*s + a) ^ 0x80, read as int8.
bits = qc.dequantize_lane(codes, params.s_u8[0, 0], params.a[0, 0])
recon = bits.view(np.int8)
print("max |recon - int8|:", np.abs(recon.astype(int) - q_i8).max())

# The same thing in wide arithmetic gives identical values.
wide = qc.dequantize_scalar(codes, params.s_u8[0, 0], params.min_qi8[0, 0])
assert np.array_equal(recon, wide)

# Hand example: q=15, s=15, group min -104.
print("15*15 - 104       :", qc.dequantize_scalar(15, 15, -104),
      "| lane path:", np.int8(np.uint8(qc.dequantize_lane(15, 15, 24))))

# Why 119?  With the full [-127, 127] range a group could span 254, giving
# s = 17 and 15*17 + a > 255 for the smallest offsets.  Enumerate every
# (min, max) group range the quantizer can see and every code it can emit.
report = qc.verify_overflow_free()
print()
for key, value in report.as_dict().items():
    if key != "counterexamples":
        print(f"{key:18s}: {value}")

# The raw 16 x 16 x 239 grid does contain overflowing points; none of them is
# produced by the quantizer.
print("example raw overflow:", qc.check_lane_points(15, 16, 250))
