"""
When does dequantization hurt?
==============================

Per k-iteration a thread block loads an N_t x K_t weight tile, dequantizes
it on the scalar cores and feeds it to the tensor cores.  If loading and
compute overlap, the slower of the two sets the pace.
"""

from w4a8lab import cost_model as cm
from w4a8lab.gemm_ref import GemmShape, TileConfig

h100 = cm.builtin_profile("h100_sxm")
a100 = cm.builtin_profile("a100_sxm")

print("transition batch, H100: W4A8 %.1f  W8A8 %.1f" % (cm.transition_batch(h100, 4), cm.transition_batch(h100, 8)))
print("transition batch, A100: W8A8 %.1f" % cm.transition_batch(a100, 8))
print("alpha budget, memory-bound : %.2f" % cm.alpha_threshold(h100, 4))
print("alpha budget at M=64       : %.2f" % cm.alpha_threshold(h100, 4, batch=64))

shape, tile = GemmShape(1, 8192, 8192), TileConfig(128, 256, 64)
print("\n   M   W8A8    W4A8(a=7/8)  W4A8(a=30)   [us]")
for m in (1, 16, 64, 128, 150, 256, 512):
    row = []
    for bits, alpha in ((8, 0), (4, 7 / 8), (4, 30)):
        q = cm.CostQuery(GemmShape(m, shape.n, shape.k), tile, bits, 8, alpha)
        t = cm.total_time(q, h100)
        row.append(f"{t.total * 1e6:8.2f} {t.regime.value[:3]}")
    print(f"{m:4d}  " + "  ".join(row))

# With 7/8 instructions per element dequantization never becomes the
# bottleneck; with 30 it is the bottleneck at every batch size.
