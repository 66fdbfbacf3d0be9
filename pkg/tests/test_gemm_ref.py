import numpy as np
import pytest

from w4a8lab.errors import AccumulatorRiskError, LayoutError, ValidationError
from w4a8lab.gemm_ref import (ActivationQuant, TileConfig, accumulate_w4a8, check_accumulator_range,
                              gemm_oracle, gemm_w4a8, oracle_accumulate,
                              quantize_activations_per_token)
from w4a8lab.packed_exec import InstructionCounter
from w4a8lab.quant_core import dequantize_bundle, quantize_weights
from w4a8lab.tensor_io import Layout, QuantizedWeightBundle, pack_u4


def _triple_loop(x, w):
    m, k = x.shape
    n = w.shape[0]
    out = np.zeros((m, n), dtype=object)
    for i in range(m):
        for j in range(n):
            out[i, j] = sum(int(x[i, l]) * int(w[j, l]) for l in range(k))
    return out


def _instance(rng, m, n, k, layout=Layout.PLAIN_ROW_MAJOR):
    act = quantize_activations_per_token(rng.standard_normal((m, k)))
    b = quantize_weights(rng.standard_normal((n, k)), 64, layout)
    return act, b


def test_activation_quant_examples():
    a = quantize_activations_per_token(np.array([[0.0, 0.0], [12.7, -1.0]]))
    assert a.token_scales[0] == 1 and not a.x_i8[0].any()
    assert a.x_i8[1, 0] == 127
    X = np.random.default_rng(0).standard_normal((4, 32))
    a = quantize_activations_per_token(X)
    err = np.abs(a.token_scales[:, None].astype(np.float64) * a.x_i8 - X)
    assert (err <= a.token_scales[:, None] / 2 * (1 + 1e-6)).all()


def test_activation_validation():
    with pytest.raises(ValidationError):
        quantize_activations_per_token(np.array([[np.inf]]))
    with pytest.raises(ValidationError):
        ActivationQuant(np.array([[-128]]), np.array([1.0]))


def test_single_mac():
    b = QuantizedWeightBundle(1, 1, 1, Layout.PLAIN_ROW_MAJOR, pack_u4([0]),
                              np.array([[1]], np.uint8), np.array([[131]], np.uint8),
                              np.array([0.5], np.float32))
    assert dequantize_bundle(b).tolist() == [[3]]
    act = ActivationQuant(np.array([[2]]), np.array([1.0]))
    assert gemm_w4a8(act, b, TileConfig(1, 1, 1)).tolist() == [[3.0]]


def test_engines_match_triple_loop():
    rng = np.random.default_rng(1)
    act, b = _instance(rng, 8, 64, 128)
    w = dequantize_bundle(b)
    want = _triple_loop(act.x_i8, w)
    cfg = TileConfig(4, 16, 64)
    for engine in ("scalar", "packed"):
        acc = accumulate_w4a8(act, b, cfg, engine)
        assert acc.dtype == np.int32
        assert (acc.astype(object) == want).all()
    assert np.array_equal(oracle_accumulate(act, w), want.astype(np.int64))
    y = gemm_w4a8(act, b, cfg, "packed")
    ref = gemm_oracle(act, w, b.channel_scales)
    np.testing.assert_allclose(y, ref, rtol=1e-6, atol=0)


def test_tile_size_independence():
    rng = np.random.default_rng(2)
    act, b = _instance(rng, 16, 128, 256)
    ref = accumulate_w4a8(act, b, TileConfig(16, 128, 256))
    for cfg in [TileConfig(1, 1, 1), TileConfig(3, 7, 5), TileConfig(8, 64, 64), TileConfig(64, 32, 128)]:
        assert np.array_equal(accumulate_w4a8(act, b, cfg), ref)


def test_parallel_deterministic():
    rng = np.random.default_rng(3)
    act, b = _instance(rng, 32, 128, 128, Layout.DUAL_MMA_PACKED)
    serial = gemm_w4a8(act, b, TileConfig(8, 16, 64), "packed")
    par = gemm_w4a8(act, b, TileConfig(8, 16, 64), "packed", workers=4)
    assert serial.tobytes() == par.tobytes()


def test_linearity_and_zero():
    rng = np.random.default_rng(4)
    _, b = _instance(rng, 1, 64, 64)
    x = rng.integers(-63, 64, size=(4, 64))
    acc = accumulate_w4a8(ActivationQuant(x, np.ones(4)), b, TileConfig(4, 64, 64))
    acc2 = accumulate_w4a8(ActivationQuant(2 * x, np.ones(4)), b, TileConfig(4, 64, 64))
    assert np.array_equal(acc2, 2 * acc)
    zero = gemm_w4a8(ActivationQuant(np.zeros((2, 64)), np.ones(2)), b, TileConfig(2, 8, 64))
    assert not zero.any()


def test_one_hot_rows_select_weights():
    rng = np.random.default_rng(5)
    _, b = _instance(rng, 1, 64, 128)
    x = np.zeros((3, 128))
    x[0, 5] = x[1, 77] = x[2, 127] = 1
    act = ActivationQuant(x, np.ones(3))
    w = dequantize_bundle(b)
    y = gemm_oracle(act, w, b.channel_scales)
    for row, col in enumerate((5, 77, 127)):
        np.testing.assert_array_equal(y[row], w[:, col] * b.channel_scales.astype(np.float64))


def test_constant_weights_closed_form():
    b = QuantizedWeightBundle(2, 64, 64, Layout.PLAIN_ROW_MAJOR, pack_u4(np.zeros((2, 64), np.uint8)),
                              np.ones((2, 1), np.uint8), np.array([[133], [120]], np.uint8),
                              np.ones(2, np.float32))
    x = np.arange(-32, 32)[None]
    acc = accumulate_w4a8(ActivationQuant(x, [1.0]), b, TileConfig(1, 2, 64))
    assert acc.tolist() == [[5 * x.sum(), -8 * x.sum()]]


def test_packed_instruction_accounting():
    rng = np.random.default_rng(6)
    act, b = _instance(rng, 2, 64, 128)
    counter = InstructionCounter()
    accumulate_w4a8(act, b, TileConfig(2, 64, 64), "packed", counter=counter)
    assert counter.total * 8 == 7 * 64 * 128


def test_errors():
    rng = np.random.default_rng(7)
    act, b = _instance(rng, 2, 64, 128)
    with pytest.raises(ValidationError):
        accumulate_w4a8(quantize_activations_per_token(np.ones((2, 64))), b, TileConfig(2, 64, 64))
    with pytest.raises(LayoutError):
        accumulate_w4a8(act, b, TileConfig(2, 64, 32), "packed")
    with pytest.raises(AccumulatorRiskError):
        check_accumulator_range(2**31 // 127**2 + 1)
    check_accumulator_range(2**31 // 127**2)
    with pytest.raises(ValidationError):
        TileConfig.parse("64x64")
    assert TileConfig.parse("8X16x64") == TileConfig(8, 16, 64)
