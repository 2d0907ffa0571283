import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xvaengine.errors import ConfigError
from xvaengine.instruments import (
    PAYER, RECEIVER, MarginSpec, NettingSet, Portfolio, Trade, initial_margin, mtm, par_rate, set_value,
    trade_value, variation_margin,
)
from xvaengine.market_sim import ModelParams, TimeGrid, generate_primary, zero_bond

PARAMS = ModelParams(r0=0.005, mean_reversion=0.1, rate_vol=0.01, long_term_rate=0.03)
GRID = TimeGrid.uniform(10.0, 0.25)


def test_par_swap_is_worth_zero_at_inception():
    for m in (2.0, 5.0, 10.0, 30.0):
        for kind in (PAYER, RECEIVER):
            t = Trade("x", kind, 1e4, m, "A")
            assert abs(float(trade_value(PARAMS, t, 0.0, PARAMS.r0))) < 1e-9 * 1e4


def test_matured_trade_is_zero():
    t = Trade("x", PAYER, 1e4, 2.0, "A")
    assert np.all(trade_value(PARAMS, t, 2.0, np.linspace(-0.05, 0.1, 7)) == 0.0)
    assert np.all(trade_value(PARAMS, t, 3.5, np.array([0.01])) == 0.0)


def test_mirrored_trades_cancel():
    a = Trade("a", RECEIVER, 1e4, 10.0, "A")
    b = Trade("b", PAYER, 1e4, 10.0, "A")
    ns = NettingSet("A", "A", (a, b))
    s = generate_primary(PARAMS, GRID, 30, seed=1)
    for k in range(0, len(GRID), 7):
        np.testing.assert_allclose(set_value(PARAMS, ns, GRID.times[k], s.short_rate[:, k]), 0.0, atol=1e-9)


def test_trade_additivity():
    trades = (Trade("a", RECEIVER, 1e4, 10.0, "A"), Trade("b", PAYER, 5e3, 3.0, "A"),
              Trade("c", PAYER, 2e4, 7.0, "A", fixed_rate=0.02))
    ns = NettingSet("A", "A", trades)
    s = generate_primary(PARAMS, GRID, 10, seed=2)
    for k in (0, 5, 13, 30):
        total = sum(trade_value(PARAMS, t, GRID.times[k], s.short_rate[:, k]) for t in trades)
        np.testing.assert_allclose(set_value(PARAMS, ns, GRID.times[k], s.short_rate[:, k]), total, rtol=1e-12)
        assert mtm(PARAMS, ns, s, 3, k) == pytest.approx(float(total[3]), rel=1e-12, abs=1e-12)


def test_payer_gains_when_rates_rise():
    t = Trade("x", PAYER, 1e4, 10.0, "A")
    v = trade_value(PARAMS, t, 1.0, np.array([0.0, 0.02, 0.05]))
    assert np.all(np.diff(v) > 0)


def test_analytic_value_matches_monte_carlo_cash_flows():
    # off-market receiver swap; fixed leg at 6M, continuously settled floating leg
    k_fix = 0.03
    t = Trade("x", RECEIVER, 1e4, 5.0, "A", fixed_rate=k_fix)
    grid = TimeGrid.uniform(5.0, 1 / 64)
    s = generate_primary(PARAMS, grid, 4000, seed=3)
    pay, acc = t.fixed_schedule()
    idx = [grid.index_at_or_after(p) for p in pay]
    fixed = k_fix * (s.discount[:, idx] @ acc)
    # floating leg pays r dt: its PV is 1 - beta_T
    floating = 1.0 - s.discount[:, -1]
    pv = 1e4 * (fixed - floating)
    se = pv.std() / np.sqrt(pv.size)
    assert abs(pv.mean() - float(trade_value(PARAMS, t, 0.0, PARAMS.r0))) < 3 * se


def test_par_rate_uses_initial_curve():
    t = Trade("x", RECEIVER, 1.0, 5.0, "A")
    pay, acc = t.fixed_schedule()
    annuity = float(np.sum(acc * zero_bond(PARAMS, pay, PARAMS.r0)))
    assert par_rate(PARAMS, t) * annuity == pytest.approx(1 - float(zero_bond(PARAMS, 5.0, PARAMS.r0)))


def test_trade_validation():
    with pytest.raises(ConfigError):
        Trade("x", "swaption", 1.0, 1.0, "A")
    with pytest.raises(ConfigError):
        Trade("x", PAYER, -1.0, 1.0, "A")
    with pytest.raises(ConfigError):
        NettingSet("A", "A", (Trade("x", PAYER, 1.0, 1.0, "B"),))


def test_variation_margin_thresholds():
    v = np.array([-300.0, -50.0, 0.0, 40.0, 250.0])
    np.testing.assert_array_equal(variation_margin(v, np.inf), 0.0)
    np.testing.assert_array_equal(variation_margin(v, 0.0), v)
    np.testing.assert_array_equal(variation_margin(v, 100.0), [-200.0, 0.0, 0.0, 0.0, 150.0])


@settings(max_examples=60, deadline=None)
@given(v=st.floats(-1e6, 1e6), h=st.floats(0.0, 1e5))
def test_variation_margin_leaves_bounded_residual(v, h):
    vm = float(variation_margin(np.array(v), h))
    assert abs(v - vm) <= h + 1e-9
    assert vm * v >= 0


def test_fixed_and_quantile_initial_margin():
    t = Trade("x", PAYER, 1e4, 5.0, "A")
    ns = NettingSet("A", "A", (t,), MarginSpec(im_posted=("fixed", 50.0), im_received=("quantile", 0.99, 10 / 365)))
    r = np.array([0.0, 0.02])
    np.testing.assert_array_equal(initial_margin(PARAMS, ns, ns.margin.im_posted, 1.0, r, -1.0), 50.0)
    np.testing.assert_array_equal(initial_margin(PARAMS, ns, ns.margin.im_posted, 5.0, r, -1.0), 0.0)
    im = initial_margin(PARAMS, ns, ns.margin.im_received, 1.0, r, +1.0)
    assert np.all(im > 0)
    # 99% ten-day move of a 4y payer swap: duration ~ 3.7, rate sd ~ 0.01 * sqrt(10/365)
    approx = 1e4 * 3.7 * 0.01 * np.sqrt(10 / 365) * 2.33
    assert im[0] == pytest.approx(approx, rel=0.25)
    with pytest.raises(ConfigError):
        MarginSpec(im_posted=("quantile", 1.5, 0.1))
    with pytest.raises(ConfigError):
        MarginSpec(vm_threshold=-1.0)


def test_portfolio_editing():
    a = Trade("a", RECEIVER, 1.0, 5.0, "A")
    pf = Portfolio((NettingSet("A", "A", (a,)),))
    pf2 = pf.with_trade(Trade("b", PAYER, 1.0, 5.0, "A"))
    assert [t.id for t in pf2.trades] == ["a", "b"]
    pf3 = pf2.with_trade(Trade("c", PAYER, 1.0, 2.0, "Z"), counterparty_id="Z")
    assert pf3.netting_sets[-1].counterparty_id == "Z"
    with pytest.raises(ConfigError):
        pf.with_trade(a)
    with pytest.raises(ConfigError):
        pf.with_trade(Trade("d", PAYER, 1.0, 2.0, "Y"))
    assert pf3.without_trade("c").trades == pf2.trades
