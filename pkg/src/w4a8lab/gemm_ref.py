"""Tiled reference W4A8 GEMM with fused dequantization.

``Y = X W^T`` where X is per-token INT8 and W is a quantized weight bundle.
The main loop walks k-tiles in ascending order; each k-tile of W is
dequantized to INT8 (scalar reference path or packed register-word path)
and multiplied into exact 32-bit accumulators owned by one output tile.
Channel and token scales are applied in the epilogue.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import layout as _layout
from .errors import AccumulatorRiskError, LayoutError, ValidationError
from .packed_exec import InstructionCounter, dequant_packed, words_to_bytes
from .quant_core import _check_finite, dequantize_bundle, epilogue_dequantize, round_half_away
from .tensor_io import Layout, QuantizedWeightBundle

ACT_MAX = 127
INT32_MAX = 2**31 - 1


class Engine(enum.Enum):
    SCALAR = "scalar"
    PACKED = "packed"


@dataclass(frozen=True)
class GemmShape:
    m: int
    n: int
    k: int

    def __post_init__(self):
        if min(self.m, self.n, self.k) < 1:
            raise ValidationError(f"GEMM extents must be positive: {self}")


@dataclass(frozen=True)
class TileConfig:
    m_t: int
    n_t: int
    k_t: int

    def __post_init__(self):
        if min(self.m_t, self.n_t, self.k_t) < 1:
            raise ValidationError(f"tile extents must be positive: {self}")

    @classmethod
    def parse(cls, text: str) -> "TileConfig":
        try:
            m_t, n_t, k_t = (int(v) for v in text.lower().split("x"))
        except ValueError:
            raise ValidationError(f"tile must look like MxNxK, got {text!r}") from None
        return cls(m_t, n_t, k_t)


@dataclass
class ActivationQuant:
    x_i8: np.ndarray
    token_scales: np.ndarray

    def __post_init__(self):
        self.x_i8 = np.asarray(self.x_i8, dtype=np.int8)
        self.token_scales = np.asarray(self.token_scales, dtype=np.float32).reshape(-1)
        if self.x_i8.ndim != 2 or self.token_scales.shape != (self.x_i8.shape[0],):
            raise ValidationError("activations must be m x k with one scale per row")
        if np.any(self.x_i8 == -128):
            raise ValidationError("activation codes must lie in [-127, 127]")
        ts = self.token_scales
        if not (np.all(np.isfinite(ts)) and np.all(ts > 0)):
            raise ValidationError("token scales must be finite and positive")


def quantize_activations_per_token(X) -> ActivationQuant:
    """Symmetric per-row INT8 quantization (scale = max|x| / 127, 1 for zero rows)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"expected a 2-D activation matrix, got shape {X.shape}")
    _check_finite(X, "activation")
    absmax = np.abs(X).max(axis=1)
    scale = np.where(absmax > 0, absmax / ACT_MAX, 1.0)
    q = np.clip(round_half_away(X / scale[:, None]), -ACT_MAX, ACT_MAX)
    return ActivationQuant(q.astype(np.int8), scale.astype(np.float32))


def check_accumulator_range(k: int) -> None:
    if k * ACT_MAX * ACT_MAX > INT32_MAX:
        raise AccumulatorRiskError(f"k={k} can overflow a 32-bit accumulator")


def _check_shapes(act: ActivationQuant, n: int, k: int):
    if act.x_i8.shape[1] != k:
        raise ValidationError(f"activation k={act.x_i8.shape[1]} does not match weight k={k}")
    check_accumulator_range(k)


def dequantize_packed_span(b: QuantizedWeightBundle, k0: int, k1: int,
                           counter: InstructionCounter | None = None) -> np.ndarray:
    """INT8 weights for columns ``[k0, k1)`` via the register-word path.

    ``b`` must use the dual-MMA layout.  Each 32-bit word carries eight codes
    of one weight row from one quantization group, so it is dequantized with
    that group's ``(s, a)``.
    """
    if b.layout is not Layout.DUAL_MMA_PACKED:
        raise LayoutError("packed engine needs a dual-MMA packed bundle")
    d = b.fragment_descriptor
    words = _layout.pair_words(b.packed_weights, b.n, b.k, k0, k1, d)
    tiles, pairs = words.shape[:2]
    rows, cols = _layout.stream_coords((k1 - k0), d)
    # first code of each word decides its row and group
    word_rows = rows[..., ::8] + (np.arange(tiles) * d.mma_m)[:, None, None, None]
    word_cols = cols[..., ::8] + k0
    groups = word_cols // b.group_size
    s = b.group_scales[word_rows, groups]
    a = b.group_offsets[word_rows, groups]
    out, _ = dequant_packed(words, s, a, counter)
    bits = words_to_bytes(out)
    w = np.empty((b.n, k1 - k0), dtype=np.uint8)
    full_rows = rows[None] + (np.arange(tiles) * d.mma_m)[:, None, None, None]
    w[full_rows, np.broadcast_to(cols, full_rows.shape)] = bits
    return w.view(np.int8)


def accumulate_w4a8(act: ActivationQuant, bundle: QuantizedWeightBundle, cfg: TileConfig,
                    engine: Engine | str = Engine.SCALAR, workers: int = 1,
                    counter: InstructionCounter | None = None) -> np.ndarray:
    """Exact int32 accumulators of ``X_i8 @ W_hat^T``."""
    engine = Engine(engine)
    m, k = act.x_i8.shape
    n = bundle.n
    _check_shapes(act, n, bundle.k)
    if engine is Engine.PACKED:
        span = _layout.DEFAULT_DESCRIPTOR.dual_k_span
        if cfg.k_t % span:
            raise LayoutError(f"packed engine needs k_t to be a multiple of {span}")
        if bundle.layout is not Layout.DUAL_MMA_PACKED:
            bundle = bundle.with_layout(Layout.DUAL_MMA_PACKED)
    x = act.x_i8.astype(np.int32)
    acc = np.zeros((m, n), dtype=np.int32)
    out_tiles = [(i, j) for i in range(0, m, cfg.m_t) for j in range(0, n, cfg.n_t)]

    for k0 in range(0, k, cfg.k_t):
        k1 = min(k0 + cfg.k_t, k)
        if engine is Engine.PACKED:
            w = dequantize_packed_span(bundle, k0, k1, counter).astype(np.int32)
        else:
            w = dequantize_bundle(bundle, k0, k1).astype(np.int32)

        def mac(tile):
            i, j = tile
            acc[i:i + cfg.m_t, j:j + cfg.n_t] += x[i:i + cfg.m_t, k0:k1] @ w[j:j + cfg.n_t].T

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                list(pool.map(mac, out_tiles))
        else:
            for tile in out_tiles:
                mac(tile)
    return acc


def gemm_w4a8(act: ActivationQuant, bundle: QuantizedWeightBundle, cfg: TileConfig,
              engine: Engine | str = Engine.SCALAR, workers: int = 1) -> np.ndarray:
    """W4A8 GEMM returning float32 ``m x n``."""
    acc = accumulate_w4a8(act, bundle, cfg, engine, workers)
    return epilogue_dequantize(acc, bundle.channel_scales[None, :], act.token_scales[:, None])


def oracle_accumulate(act: ActivationQuant, w_i8) -> np.ndarray:
    """Untiled int64 reduction, one output element at a time per row."""
    w = np.asarray(w_i8, dtype=np.int64)
    x = act.x_i8.astype(np.int64)
    if x.shape[1] != w.shape[1]:
        raise ValidationError("activation and weight k differ")
    return np.einsum("il,jl->ij", x, w)


def gemm_oracle(act: ActivationQuant, w_i8, channel_scales) -> np.ndarray:
    """Naive reference: exact integer GEMM, then float64 scaling."""
    acc = oracle_accumulate(act, w_i8)
    cs = np.asarray(channel_scales, dtype=np.float64)
    if cs.shape != (acc.shape[1],):
        raise ValidationError("need one channel scale per output column")
    return acc.astype(np.float64) * cs[None, :] * act.token_scales.astype(np.float64)[:, None]
