from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from xvaengine.bsde import linear_projection
from xvaengine.errors import ConfigError
from xvaengine.exposure import (
    FTDDVA_AS_WRITTEN, FTDDVA_OWN_DEFAULT, blended_spread, build_cube, build_tables, ftd_cva_dva, mva_integrand,
    ucva, ucva0, ucva_paths,
)
from xvaengine.instruments import PAYER, RECEIVER, MarginSpec, NettingSet, Portfolio, Trade, trade_value
from xvaengine.market_sim import ModelParams, TimeGrid, generate_primary, spawn_secondary

from conftest import assert_within, flat_credit, single_swap_book

PARAMS = ModelParams(r0=0.005, mean_reversion=0.1, rate_vol=0.01, long_term_rate=0.03)


def _setup(portfolio, credit, params=PARAMS, horizon=5.0, step=0.25, n=400, seed=11, n_rate=201, **kw):
    grid = TimeGrid.uniform(horizon, step)
    s = generate_primary(params, grid, n, seed, credit.hazard_curves())
    tables = build_tables(params, portfolio, credit, grid, n_rate=n_rate, n_rate_ucva=41, n_quad=16, **kw)
    return s, tables, build_cube(portfolio, s, credit, tables)


def test_collateralized_exposure_identity():
    book = single_swap_book(margin=MarginSpec(vm_threshold=50.0))
    s, tables, cube = _setup(book, flat_credit())
    np.testing.assert_allclose(cube.p, cube.mtm - cube.vm, atol=1e-9)
    assert np.all(np.abs(cube.p) <= 50.0 + 1e-9)
    # table interpolation agrees with direct valuation on the simulated rates
    direct = trade_value(PARAMS, book.trades[0], 1.0, s.short_rate[:, 4])
    np.testing.assert_allclose(cube.mtm[:, 4, 0], direct, atol=2e-3 * 1e4 * 1e-2)


def test_full_collateralization_has_no_losses():
    book = single_swap_book(margin=MarginSpec(vm_threshold=0.0))
    s, _, cube = _setup(book, flat_credit(cp_spread_bps=500.0))
    assert np.all(cube.loss == 0.0)
    assert ucva0(cube, s).value == 0.0


def test_forced_default_loss_is_lgd_times_exposure():
    # mirrored trades net to zero value; a gap shock of 100 makes Q = 100
    a = Trade("a", PAYER, 1e4, 5.0, "A")
    b = Trade("b", RECEIVER, 1e4, 5.0, "A")
    book = Portfolio((NettingSet("A", "A", (a, b)),))
    credit = flat_credit(cp_spread_bps=1e5)
    s, _, cube = _setup(book, credit, gap_shock={"A": 100.0})
    hit = cube.cp_default_index[:, 0] < len(s.times)
    assert hit.mean() > 0.99
    np.testing.assert_allclose(cube.loss[hit, 0], 60.0, atol=1e-9)


def test_zero_hazards_give_zero_cva():
    book = single_swap_book()
    s, _, cube = _setup(book, flat_credit(cp_spread_bps=0.0))
    assert ucva0(cube, s).value == 0.0
    assert ucva0(cube, method="realized").value == 0.0
    cva, dva = ftd_cva_dva(cube, s, flat_credit(cp_spread_bps=0.0))
    assert cva.value == 0.0 and dva.value == 0.0
    assert np.all(ucva_paths(cube, s) == 0.0)


def test_ucva_matches_deterministic_rate_integral():
    # zero vol: exposure is a known deterministic function of time
    params = ModelParams(r0=0.005, mean_reversion=0.1, rate_vol=0.0, long_term_rate=0.03)
    book = single_swap_book(PAYER, maturity=5.0)
    gamma = 0.01 / 0.6
    trade = book.trades[0]

    def rate(t):
        return 0.03 + (0.005 - 0.03) * np.exp(-0.1 * t)

    def integral_r(t):
        return 0.03 * t + (0.005 - 0.03) * (1 - np.exp(-0.1 * t)) / 0.1

    def integrand(t):
        e = max(float(trade_value(params, trade, t, rate(t))), 0.0)
        return 0.6 * e * np.exp(-integral_r(t)) * gamma * np.exp(-gamma * t)

    # split at coupon dates, where the exposure jumps
    knots = np.arange(0.0, 5.01, 0.5)
    oracle = sum(quad(integrand, a + 1e-12, b - 1e-12, limit=200)[0] for a, b in zip(knots[:-1], knots[1:]))
    errors = []
    for step in (1 / 32, 1 / 64):
        s, _, cube = _setup(book, flat_credit(), params, step=step, n=20)
        est = ucva0(cube, s)
        assert ucva(cube, s, 0).value == est.value
        errors.append(est.value - oracle)
    # snapping defaults to the next grid point is first order in the step
    assert abs(errors[1]) < 0.04 * oracle
    assert 1.6 < errors[0] / errors[1] < 2.4


def test_conditional_and_realized_ucva0_agree():
    book = single_swap_book(RECEIVER, maturity=5.0)
    credit = flat_credit(cp_spread_bps=300.0)
    s, _, cube = _setup(book, credit, n=4000, seed=5)
    cond = ucva0(cube, s)
    real = ucva0(cube, method="realized")
    assert cond.se < real.se
    assert_within(cond.value - real.value, 0.0, np.hypot(cond.se, real.se))
    with pytest.raises(ValueError):
        ucva0(cube)


def test_conditional_ucva_table_matches_nested_simulation():
    book = single_swap_book(PAYER, maturity=3.0)
    credit = flat_credit(cp_spread_bps=200.0)
    grid = TimeGrid.uniform(3.0, 0.25)
    hz = credit.hazard_curves()
    s = generate_primary(PARAMS, grid, 4, 3, hz)
    tables = build_tables(PARAMS, book, credit, grid, n_rate=401, n_rate_ucva=81, n_quad=24)
    k = 4
    sub = spawn_secondary(s, PARAMS, k, 20_000, seed=3, hazards=hz, end_index=len(grid) - 1)
    steps = sub.short_rate.shape[1]
    # brute force: discounted loss at the snapped default, alive at the anchor
    didx = sub.default_index()[:, 0]
    rows = np.arange(sub.n_paths)
    hit = didx < steps
    j = np.minimum(didx, steps - 1)
    loss = tables.loss.at(k + j, sub.short_rate[rows, j])[:, 0]
    alive0 = sub.default_time[:, 0] > grid.times[k]
    sample = np.where(hit & alive0, sub.discount[rows, j] * loss, 0.0)
    for p in range(4):
        mine = sub.parent == p
        if not alive0[mine].all():
            continue
        x = sample[mine]
        target = float(tables.ucva(k, s.short_rate[p, k])[0])
        assert_within(x.mean(), target, x.std() / np.sqrt(x.size), k=4)


def test_ftd_equals_ucva_when_bank_cannot_default():
    book = single_swap_book(RECEIVER, maturity=5.0)
    credit = flat_credit(cp_spread_bps=400.0, bank_spread_bps=0.0)
    s, _, cube = _setup(book, credit, n=1000)
    cva, _ = ftd_cva_dva(cube, s, credit)
    assert cva.value == pytest.approx(ucva0(cube, method="realized").value, rel=1e-14)


def test_ftd_cva_below_ucva_on_common_paths():
    book = single_swap_book(RECEIVER, maturity=5.0)
    credit = flat_credit(cp_spread_bps=400.0, bank_spread_bps=400.0)
    s, _, cube = _setup(book, credit, n=1000)
    cva, _ = ftd_cva_dva(cube, s, credit)
    assert cva.value < ucva0(cube, method="realized").value


def test_ftd_dva_mirrors_cva_of_opposite_book():
    credit = flat_credit(cp_spread_bps=300.0, bank_spread_bps=200.0)
    # the loss table interpolates max(Q, 0), so a fine rate grid keeps the kink error small
    s, _, payer = _setup(single_swap_book(PAYER), credit, n=800, n_rate=3201)
    _, _, receiver = _setup(single_swap_book(RECEIVER), credit, n=800, n_rate=3201)
    cva_p, dva_p = ftd_cva_dva(payer, s, credit)
    cva_r, dva_r = ftd_cva_dva(receiver, s, credit)
    assert dva_p.value == pytest.approx(cva_r.value, rel=1e-6)
    assert dva_r.value == pytest.approx(cva_p.value, rel=1e-6)
    _, own = ftd_cva_dva(payer, s, credit, FTDDVA_OWN_DEFAULT)
    assert own.value >= 0.0
    with pytest.raises(ConfigError):
        ftd_cva_dva(payer, s, credit, "other")
    assert FTDDVA_AS_WRITTEN != FTDDVA_OWN_DEFAULT


def test_ucva_increases_with_hazard():
    book = single_swap_book(RECEIVER, maturity=5.0)
    values = []
    for bps in (50.0, 100.0, 200.0, 400.0):
        s, _, cube = _setup(book, flat_credit(cp_spread_bps=bps), n=300, seed=4)
        values.append(ucva0(cube, s).value)
    assert np.all(np.diff(values) > 0)


def test_mva_constant_im_oracle():
    params = ModelParams(r0=0.0, mean_reversion=0.0, rate_vol=0.0, long_term_rate=0.0)
    margin = MarginSpec(im_posted=("fixed", 100.0))
    book = single_swap_book(maturity=10.0, margin=margin)
    credit = flat_credit(cp_spread_bps=0.0, funding_spread_override=0.01)
    s, _, cube = _setup(book, credit, params, horizon=10.0, n=20)
    f = mva_integrand(cube, credit)
    mva = linear_projection(f, s.discount, np.ones(f.shape, bool), s.times)
    assert mva[0] == pytest.approx(10.0, abs=1e-9)


def _fake_cube(q, im, alive):
    q = np.asarray(q, float)[:, None, :]
    return SimpleNamespace(
        q=q, im_posted=np.asarray(im, float)[:, None, :], alive=np.asarray(alive, bool)[:, None, :],
        tables=SimpleNamespace(grid=TimeGrid((0.0, 1.0))),
    )


def test_blended_spread_examples():
    credit = flat_credit(funding_spread_override=0.01)
    cube = _fake_cube(
        q=[[-50.0], [-200.0], [10.0], [-50.0], [0.0]],
        im=[[100.0], [100.0], [100.0], [0.0], [100.0]],
        alive=[[True]] * 5,
    )
    got = blended_spread(cube, credit, 0)
    np.testing.assert_allclose(got, [0.005, 0.01, 0.0, 0.0, 0.0])
    two = _fake_cube(q=[[-30.0, -100.0]], im=[[100.0, 50.0]], alive=[[True, True]])
    assert blended_spread(two, credit, 0)[0] == pytest.approx(0.01 * 80.0 / 150.0)
    dead = _fake_cube(q=[[-30.0, -100.0]], im=[[100.0, 50.0]], alive=[[True, False]])
    assert blended_spread(dead, credit, 0)[0] == pytest.approx(0.01 * 30.0 / 100.0)


@settings(max_examples=80, deadline=None)
@given(
    q=st.lists(st.floats(-1e4, 1e4), min_size=3, max_size=3),
    im=st.lists(st.floats(0.0, 1e4), min_size=3, max_size=3),
    alive=st.lists(st.booleans(), min_size=3, max_size=3),
    lam=st.floats(0.0, 0.1),
)
def test_blended_spread_lies_between_zero_and_unsecured(q, im, alive, lam):
    credit = flat_credit(funding_spread_override=lam)
    v = blended_spread(_fake_cube([q], [im], [alive]), credit, 0)[0]
    assert -1e-15 <= v <= lam * (1 + 1e-12)


def test_missing_counterparty_curve():
    book = single_swap_book(cp="Z")
    with pytest.raises(ConfigError):
        build_tables(PARAMS, book, flat_credit(), TimeGrid.uniform(5.0, 0.25))
