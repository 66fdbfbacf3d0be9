"""
A W4A8 GEMM, checked against an untiled oracle
==============================================
"""

import time

import numpy as np

from w4a8lab import gemm_ref as g
from w4a8lab import quant_core as qc
from w4a8lab.packed_exec import InstructionCounter
from w4a8lab.tensor_io import Layout

rng = np.random.default_rng(0)
m, n, k = 32, 256, 512

X = rng.standard_normal((m, k)).astype(np.float32)
W = rng.standard_normal((n, k)).astype(np.float32) * 0.02

act = g.quantize_activations_per_token(X)
bundle = qc.quantize_weights(W, group_size=64, layout=Layout.DUAL_MMA_PACKED)
w_i8 = qc.dequantize_bundle(bundle)

ref = g.oracle_accumulate(act, w_i8)
for cfg in ["8x64x64", "32x256x128", "5x17x256"]:
    for engine in ("scalar", "packed"):
        t0 = time.perf_counter()
        acc = g.accumulate_w4a8(act, bundle, g.TileConfig.parse(cfg), engine)
        dt = time.perf_counter() - t0
        print(f"tile {cfg:11s} {engine:6s}: exact={np.array_equal(acc, ref)}  {dt * 1e3:6.1f} ms")

counter = InstructionCounter()
g.accumulate_w4a8(act, bundle, g.TileConfig(m, n, 64), "packed", counter=counter)
print("\npacked dequant instructions:", counter.as_dict(), "->", counter.total * 8 / (n * k), "per 8")

# The float result against float32 matmul, to show what quantization costs.
Y = g.gemm_w4a8(act, bundle, g.TileConfig(m, n, 64), "packed")
rel = np.linalg.norm(Y - X @ W.T) / np.linalg.norm(X @ W.T)
print(f"relative error vs float GEMM: {rel:.4f}")
