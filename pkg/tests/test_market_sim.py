import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xvaengine.credit import HazardCurve
from xvaengine.errors import ConfigError
from xvaengine.market_sim import (
    ModelParams, TimeGrid, _coefficients, correlation_root, discount_between, exact_step,
    generate_primary, spawn_secondary, zero_bond,
)

from conftest import assert_within

GRID = TimeGrid.uniform(30.0, 0.25)


def test_grid_validation():
    with pytest.raises(ConfigError):
        TimeGrid((0.0, 1.0, 1.0))
    with pytest.raises(ConfigError):
        TimeGrid((0.5, 1.0))
    with pytest.raises(ConfigError):
        TimeGrid.uniform(1.0, 0.3)
    g = TimeGrid.uniform(2.0, 0.5)
    assert g.times == (0.0, 0.5, 1.0, 1.5, 2.0)
    assert g.one_year_index(0) == 2
    assert g.one_year_index(3) == 4


def test_flat_rate_paths_are_deterministic():
    params = ModelParams(r0=0.02, mean_reversion=0.0, rate_vol=0.0, long_term_rate=0.0)
    s = generate_primary(params, GRID, 4, seed=1)
    assert np.all(s.short_rate == 0.02)
    np.testing.assert_allclose(s.discount, np.exp(-0.02 * GRID.array)[None, :].repeat(4, 0), rtol=1e-13)
    assert np.all(s.discount[:, 0] == 1.0)


def test_zero_hazard_never_defaults():
    s = generate_primary(ModelParams(), GRID, 50, seed=2, hazards=[HazardCurve.flat(0.0)] * 3)
    assert np.all(np.isinf(s.default_time))


def test_exponential_default_probability():
    s = generate_primary(ModelParams(), GRID, 10_000, seed=3, hazards=[HazardCurve.flat(0.01)])
    hit = s.default_time[:, 0] <= 10.0
    p = 1 - np.exp(-0.1)
    assert_within(hit.mean(), p, np.sqrt(p * (1 - p) / hit.size))


def test_survival_curve_matches_at_every_grid_point():
    curve = HazardCurve((2.0, 5.0, 30.0), (0.02, 0.05, 0.03))
    s = generate_primary(ModelParams(), GRID, 4000, seed=4, hazards=[curve])
    tau = s.default_time[:, 0]
    for t in GRID.array[1::8]:
        q = curve.survival(t)
        assert_within(np.mean(tau > t + 1e-9), q, np.sqrt(q * (1 - q) / tau.size) + 1e-12)


def test_defaults_snap_to_grid():
    s = generate_primary(ModelParams(), GRID, 500, seed=5, hazards=[HazardCurve.flat(0.2)])
    tau = s.default_time[np.isfinite(s.default_time)]
    assert tau.size > 0
    assert np.all(np.isin(tau, GRID.array))


def test_discount_martingale():
    params = ModelParams(r0=0.01, rate_vol=0.015)
    s = generate_primary(params, GRID, 4000, seed=6)
    # beta_T times the bank account at T is one by construction; the
    # nontrivial check is that the mean discount matches the analytic bond.
    for k in (20, 60, 120):
        d = s.discount[:, k]
        assert_within(d.mean(), float(zero_bond(params, GRID.times[k], params.r0)), d.std() / np.sqrt(d.size))
    np.testing.assert_allclose(s.discount[:, -1] * np.exp(np.sum(s.step_integral, axis=1)), 1.0, rtol=1e-12)


def test_primary_determinism_and_prefix_stability():
    params = ModelParams()
    hz = [HazardCurve.flat(0.03), HazardCurve.flat(0.01)]
    a = generate_primary(params, GRID, 20, seed=9, hazards=hz)
    b = generate_primary(params, GRID, 20, seed=9, hazards=hz)
    c = generate_primary(params, GRID, 10, seed=9, hazards=hz)
    assert a.short_rate.tobytes() == b.short_rate.tobytes()
    assert a.default_time.tobytes() == b.default_time.tobytes()
    # per-path streams: the first paths do not depend on how many are drawn
    assert a.short_rate[:10].tobytes() == c.short_rate.tobytes()


def test_refined_grid_shares_brownian_path():
    params = ModelParams()
    coarse = generate_primary(params, TimeGrid.uniform(5.0, 0.5), 5, seed=7)
    fine = generate_primary(params, TimeGrid.uniform(5.0, 0.25), 5, seed=7)
    np.testing.assert_allclose(coarse.short_rate, fine.short_rate[:, ::2], rtol=1e-12, atol=1e-15)


def test_generate_primary_argument_errors():
    with pytest.raises(ValueError):
        generate_primary(ModelParams(), GRID, 0, seed=1)
    bad = ((1.0, 0.9, 0.9), (0.9, 1.0, -0.9), (0.9, -0.9, 1.0))
    with pytest.raises(ConfigError):
        ModelParams(correlation_matrix=bad)
    with pytest.raises(ConfigError):
        correlation_root(((1.0, 0.5), (0.4, 1.0)))


def test_copula_symmetry_between_identical_entities():
    corr = ((1.0, 0.5, 0.2), (0.5, 1.0, 0.2), (0.2, 0.2, 1.0))
    hz = [HazardCurve.flat(0.05), HazardCurve.flat(0.05), HazardCurve.flat(0.02)]
    s = generate_primary(ModelParams(correlation_matrix=corr), GRID, 6000, seed=8, hazards=hz)
    tau = s.default_time
    p0, p1 = np.mean(tau[:, 0] <= 10), np.mean(tau[:, 1] <= 10)
    assert_within(p0 - p1, 0.0, np.sqrt(2 * p0 * (1 - p0) / tau.shape[0]))
    j02, j12 = np.mean((tau[:, 0] <= 10) & (tau[:, 2] <= 10)), np.mean((tau[:, 1] <= 10) & (tau[:, 2] <= 10))
    assert_within(j02 - j12, 0.0, np.sqrt(2 * j02 / tau.shape[0]))
    # positive correlation raises the joint default probability above independence
    joint = np.mean((tau[:, 0] <= 10) & (tau[:, 1] <= 10))
    assert joint > p0 * p1 + 3 * np.sqrt(joint / tau.shape[0])


def test_secondary_degenerate_continuation():
    params = ModelParams(r0=0.03, mean_reversion=0.2, rate_vol=0.0, long_term_rate=0.05)
    s = generate_primary(params, GRID, 3, seed=1)
    sub = spawn_secondary(s, params, 8, 2, seed=1)
    k_end = 8 + sub.short_rate.shape[1] - 1
    np.testing.assert_allclose(sub.short_rate, s.short_rate[sub.parent, 8:k_end + 1], rtol=1e-12)
    assert sub.times[0] == 2.0 and sub.times[-1] >= 3.0


def test_secondary_drift_shift_accumulates():
    base = ModelParams(r0=0.02, mean_reversion=0.0, rate_vol=0.0, long_term_rate=0.0)
    shifted = ModelParams(r0=0.02, mean_reversion=0.0, rate_vol=0.0, long_term_rate=0.0, hist_drift_shift=0.01)
    s = generate_primary(base, GRID, 2, seed=1)
    sub = spawn_secondary(s, shifted, 4, 1, seed=1)
    steps = np.arange(sub.short_rate.shape[1])
    np.testing.assert_allclose(sub.short_rate[0], 0.02 + 0.01 * 0.25 * steps, rtol=1e-12)


def test_secondary_reproducible_and_validated():
    params = ModelParams()
    hz = [HazardCurve.flat(0.05)]
    s = generate_primary(params, GRID, 5, seed=3, hazards=hz)
    a = spawn_secondary(s, params, 10, 1, seed=3, hazards=hz)
    b = spawn_secondary(s, params, 10, 1, seed=3, hazards=hz)
    assert a.short_rate.shape == (5, 5)
    assert a.short_rate.tobytes() == b.short_rate.tobytes()
    assert a.default_time.tobytes() == b.default_time.tobytes()
    with pytest.raises(ValueError):
        spawn_secondary(s, params, len(GRID) - 1, 1, seed=3)
    with pytest.raises(ValueError):
        spawn_secondary(s, params, 3, 0, seed=3)


def test_secondary_inherits_earlier_defaults():
    hz = [HazardCurve.flat(0.3)]
    s = generate_primary(ModelParams(), GRID, 200, seed=4, hazards=hz)
    k = 12
    sub = spawn_secondary(s, ModelParams(), k, 3, seed=4, hazards=hz)
    early = s.default_time[sub.parent, 0] <= GRID.times[k]
    np.testing.assert_array_equal(sub.default_time[early, 0], s.default_time[sub.parent[early], 0])
    assert np.all(sub.default_time[~early, 0] > GRID.times[k])


def test_discount_between():
    params = ModelParams(r0=0.02, mean_reversion=0.0, rate_vol=0.0, long_term_rate=0.0)
    s = generate_primary(params, GRID, 1, seed=1)
    assert discount_between(s, 0, 5, 5) == 1.0
    assert discount_between(s, 0, 0, 20) == pytest.approx(np.exp(-0.1), rel=1e-12)
    with pytest.raises(ValueError):
        discount_between(s, 0, 3, 2)
    zero = generate_primary(ModelParams(r0=0.0, mean_reversion=0.0, rate_vol=0.0, long_term_rate=0.0), GRID, 1, 1)
    assert discount_between(zero, 0, 3, 40) == 1.0


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0.0, 2.0), tau=st.floats(1e-6, 40.0))
def test_coefficients_series_matches_closed_form(a, tau):
    decay, b, c2, b2, var_i, cov = _coefficients(a, np.array([tau]))
    if a * tau > 1e-2:
        assert b[0] == pytest.approx((1 - np.exp(-a * tau)) / a, rel=1e-10)
        assert b2[0] == pytest.approx((1 - np.exp(-2 * a * tau)) / (2 * a), rel=1e-10)
    assert 0 < b[0] <= tau + 1e-15
    assert var_i[0] >= 0 and b2[0] > 0
    # Cauchy-Schwarz on the joint (r, integral) law
    assert cov[0] ** 2 <= b2[0] * var_i[0] * (1 + 1e-9) + 1e-30


def test_exact_step_moments():
    params = ModelParams(r0=0.02, mean_reversion=0.3, rate_vol=0.02, long_term_rate=0.04)
    rng = np.random.default_rng(0)
    n = 200_000
    r1, i1 = exact_step(params, 2.0, np.full(n, 0.02), rng.standard_normal(n), rng.standard_normal(n))
    _, b, c2, b2, var_i, cov = _coefficients(0.3, 2.0)
    assert_within(r1.mean(), 0.02 * np.exp(-0.6) + 0.3 * 0.04 * b, r1.std() / np.sqrt(n))
    assert r1.var() == pytest.approx(0.02**2 * b2, rel=0.02)
    assert i1.var() == pytest.approx(0.02**2 * var_i, rel=0.02)
    assert np.cov(r1, i1)[0, 1] == pytest.approx(0.02**2 * cov, rel=0.03)
