import math

import pytest

from w4a8lab.cost_model import (CostQuery, Regime, alpha_threshold, builtin_profile,
                                iter_compute_time, iter_load_time, parse_profile, parse_range,
                                read_sweep_csv, sweep, sweep_to_csv, tile_time, total_time,
                                transition_batch)
from w4a8lab.errors import ValidationError
from w4a8lab.gemm_ref import GemmShape, TileConfig

H100 = builtin_profile("h100_sxm")
A100 = builtin_profile("a100_sxm")


def _q(m=64, n=8192, k=8192, tile=(64, 256, 64), **kw):
    return CostQuery(GemmShape(m, n, k), TileConfig(*tile), **kw)


def test_profiles_parse():
    assert H100.blocks == 132 and A100.mem_bw_bytes_per_s == 2.039e12
    with pytest.raises(ValidationError, match="unknown key"):
        parse_profile("bogus = 1")
    with pytest.raises(ValidationError, match="missing"):
        parse_profile("num_sms = 1")
    with pytest.raises(ValidationError):
        builtin_profile("nope")


def test_load_time_hand_formula():
    q = _q()
    phi = 3.35e12 * 8 / 4 / 132
    assert iter_load_time(q, H100) == pytest.approx(256 * 64 / phi, rel=1e-12)


def test_load_time_linear_in_bits():
    assert iter_load_time(_q(weight_bits=8), H100) == pytest.approx(2 * iter_load_time(_q(), H100))


def test_compute_time():
    assert iter_compute_time(_q(), H100)[0] == 0
    small = iter_compute_time(_q(m=4), H100)[1]
    assert small == pytest.approx(2 * 4 * 256 * 64 / (1979e12 / 132))
    r = iter_compute_time(_q(alpha=7 / 8), H100)[0] / iter_compute_time(_q(alpha=30), H100)[0]
    assert r == pytest.approx(7 / 240)


def test_zero_tile_rejected():
    with pytest.raises(ValidationError):
        _q(tile=(64, 0, 64))


def test_large_alpha_is_compute_bound():
    for m in (1, 64, 1024):
        assert total_time(_q(m=m, alpha=50), H100).regime is Regime.COMPUTE_BOUND


def test_transition_batch_equalizes():
    m_star = transition_batch(H100, 4)
    t_ld = 8192 * 8192 / H100.mem_elements_per_s(4)
    t_mma = m_star * 2 * 8192 * 8192 / H100.tc_int8_ops_per_s
    assert abs(t_ld - t_mma) <= 1e-9 * t_ld
    assert transition_batch(H100, 8) == pytest.approx(2 * m_star)


def test_w4a8_equals_w8a8_when_compute_bound():
    m = 512
    t4 = total_time(_q(m=m, tile=(512, 256, 64)), H100)
    t8 = total_time(_q(m=m, tile=(512, 256, 64), weight_bits=8), H100)
    assert t4.regime is t8.regime is Regime.COMPUTE_BOUND
    assert t4.total == pytest.approx(t8.total)


def test_alpha_threshold_forms():
    assert alpha_threshold(H100) == pytest.approx(5.07, abs=1e-3)
    m_star = transition_batch(H100, 4)
    # at the transition point the two budgets coincide
    assert alpha_threshold(H100, batch=m_star) == pytest.approx(alpha_threshold(H100))
    assert alpha_threshold(H100, batch=300, m_t=64) == alpha_threshold(H100, batch=64)


def test_tile_time_fill():
    q = _q(k=64 * 10)
    t_ld = iter_load_time(q, H100)
    t_comp = sum(iter_compute_time(q, H100))
    assert tile_time(q, H100) == pytest.approx(t_ld + t_comp + 9 * max(t_ld, t_comp))


def test_sweep_monotone_single_flip_and_csv():
    q = _q(tile=(256, 256, 64))
    rows = sweep(q, range(1, 1025), H100)
    totals = [r.total for r in rows]
    assert all(b >= a for a, b in zip(totals, totals[1:]))
    regimes = [r.regime for r in rows]
    flips = [i for i in range(1, len(regimes)) if regimes[i] is not regimes[i - 1]]
    assert len(flips) == 1
    assert abs(rows[flips[0]].batch - transition_batch(H100, 4)) <= 1
    back = read_sweep_csv(sweep_to_csv(rows))
    assert [r["total"] for r in back] == totals
    assert [r["regime"] for r in back] == regimes


@pytest.mark.parametrize("field", ["m", "n", "k", "alpha"])
def test_total_non_decreasing(field):
    base = dict(m=100, n=4096, k=4096, alpha=2.0)
    prev = None
    for v in (1, 50, 200, 1000):
        args = dict(base, **{field: v})
        t = total_time(_q(m=args["m"], n=args["n"], k=args["k"], alpha=args["alpha"]), H100).total
        assert prev is None or t >= prev
        prev = t


def test_parse_range():
    assert list(parse_range("1..4")) == [1, 2, 3, 4]
    assert list(parse_range("8..32:8")) == [8, 16, 24, 32]
    for bad in ("5..1", "x", "0..3"):
        with pytest.raises(ValidationError):
            parse_range(bad)
    with pytest.raises(ValidationError):
        sweep(_q(), [], H100)


def test_totals_are_finite():
    assert math.isfinite(total_time(_q(m=1), A100).total)
