"""End-to-end XVA pipeline: TRC*, forward reserve capital, loss process, ES, KVA, FVA, FTP."""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import bsde
from .credit import CreditSetup
from .errors import ConfigError, StageError, XVAError
from .exposure import (
    FTDDVA_AS_WRITTEN, blended_spread, build_cube, build_tables, ftd_cva_dva, im_spread_paths,
    mva_integrand, ucva0, ucva_paths,
)
from .instruments import Portfolio
from .market_sim import ModelParams, TimeGrid, generate_primary, spawn_secondary, zero_bond
from .risk_measure import ALPHA, MIN_SURVIVORS, ConditionalSample, TermStructure, conditional_es
from .stats import Estimate, batch_means

log = logging.getLogger(__name__)

METRICS = ("UCVA0", "MVA0", "FVA_star0", "FVA0", "KVA0", "FTDCVA0", "FTDDVA0", "TRC0")


@dataclass(frozen=True)
class EngineConfig:
    horizon_years: float | None = None
    step: float = 0.25
    primary_count: int = 2000
    secondary_count: int = 200
    seed: int = 20240101
    hurdle: float = 0.105
    alpha: float = ALPHA
    tol: float = bsde.DEFAULT_TOL
    max_iter: int = bsde.DEFAULT_MAX_ITER
    min_survivors: int = MIN_SURVIVORS
    passes: int = 1
    ftddva_convention: str = FTDDVA_AS_WRITTEN
    blocks: int = 20
    workers: int = 1
    rate_points: int = 801
    ucva_rate_points: int = 121
    quadrature_nodes: int = 32
    gap_shock: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.primary_count < 1 or self.secondary_count < 1:
            raise ConfigError("primary and secondary counts must be >= 1")
        if not self.step > 0:
            raise ConfigError("grid step must be positive")
        if self.hurdle < 0:
            raise ConfigError("hurdle rate must be >= 0")
        if self.passes < 1:
            raise ConfigError("passes must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def grid_for(self, portfolio: Portfolio) -> TimeGrid:
        horizon = self.horizon_years
        if horizon is None:
            horizon = max(portfolio.maturity, 1.0)
            horizon = self.step * np.ceil(horizon / self.step - 1e-9)
        if portfolio.maturity > horizon + 1e-9:
            raise ConfigError(f"portfolio maturity {portfolio.maturity} exceeds the horizon {horizon}")
        return TimeGrid.uniform(float(horizon), self.step)


@dataclass(frozen=True)
class LossRealizationSchedule:
    reset_times: tuple = ()

    def __post_init__(self):
        t = np.asarray(self.reset_times, dtype=float)
        if np.any(np.diff(t) <= 0):
            raise ValueError("reset times must be strictly increasing")
        if np.any(t < 0):
            raise ValueError("reset times must be >= 0")


@dataclass
class LossProcessPaths:
    """Primary-path TRC, RC and L = TRC - RC, plus one-year ES samples per anchor.

    ``increments[k]``/``survived[k]`` are kept only when requested; ``es_points``
    always holds ``(ES, surviving sample size)`` per anchor (``None`` elsewhere).
    """

    times: np.ndarray
    trc: np.ndarray
    rc: np.ndarray
    loss: np.ndarray
    stop_index: np.ndarray
    y: float = 0.0
    increments: list = field(default_factory=list)
    survived: list = field(default_factory=list)
    es_points: list = field(default_factory=list)

    @property
    def terminal_loss(self):
        return self.loss[np.arange(self.loss.shape[0]), self.stop_index]


@dataclass
class XVAReport:
    metrics: dict
    times: np.ndarray
    term_structures: dict
    meta: dict
    warnings: list = field(default_factory=list)
    ftp: dict | None = None

    @property
    def trc0(self):
        return self.metrics["TRC0"].value

    def value(self, name):
        return self.metrics[name].value


# --- loss process ------------------------------------------------------------------------

class _LossModel:
    """One-step reserve-capital dynamics shared by primary paths and sub-paths."""

    def __init__(self, tables, credit, mva_curve, fva_curve, ec_curve, spread, im_funding):
        self.tables = tables
        self.credit = credit
        self.t = tables.grid.array
        self.mva = mva_curve
        self.fva = fva_curve
        self.ec = ec_curve
        self.spread = spread
        self.im_funding = im_funding
        self.im_spread = credit.im_spread(self.t)

    def _trc(self, k, r, alive):
        u = np.sum(self.tables.ucva(k, r) * alive, axis=-1)
        return u + self.mva[k] + self.fva[k], u

    def run(self, k0, rates, step_integral, cp_time, bank_time):
        """Return (TRC, L) on the local window starting at grid index ``k0``."""
        m, steps1 = rates.shape
        t = self.t
        tb = self.tables
        S = tb.n_sets
        trc = np.zeros((m, steps1))
        loss = np.zeros((m, steps1))
        alive = cp_time > t[k0] + 1e-12
        act = bank_time > t[k0] + 1e-12
        trc_k, _ = self._trc(k0, rates[:, 0], alive)
        trc_k = np.where(act, trc_k, 0.0)
        trc[:, 0] = trc_k
        for j in range(steps1 - 1):
            k = k0 + j
            dt = t[k + 1] - t[k]
            r = rates[:, j]
            need = np.sum(tb.p(k, r) * alive, axis=-1) if S else np.zeros(m)
            funding = self.spread[k] * np.maximum(need - self.ec[k] - trc_k, 0.0) * dt
            if tb.has_im:
                posted = tb.im_posted(k, r)
                if self.im_funding == "blended":
                    covered = np.minimum(np.maximum(-tb.q(k, r), 0.0), posted)
                    den = np.sum(alive * posted, axis=-1)
                    with np.errstate(divide="ignore", invalid="ignore"):
                        lam_bar = np.where(den > 0, self.spread[k] * np.sum(alive * covered, axis=-1) / den, 0.0)
                else:
                    lam_bar = self.im_spread[k]
                funding = funding + lam_bar * np.sum(alive * posted, axis=-1) * dt
            accrual = trc_k * np.expm1(step_integral[:, j])

            r1 = rates[:, j + 1]
            alive1 = cp_time > t[k + 1] + 1e-12
            hit = alive & ~alive1
            cp_loss = np.sum(tb.loss(k + 1, r1) * hit, axis=-1) if S else np.zeros(m)
            dies = act & (bank_time <= t[k + 1] + 1e-12)
            trc1, u1 = self._trc(k + 1, r1, alive1)
            trc1 = np.where(act & ~dies, trc1, 0.0)
            transfer = np.where(dies, u1, 0.0)
            d_rc = accrual - cp_loss - funding - transfer
            inc = np.where(act, (trc1 - trc_k) - d_rc, 0.0)
            loss[:, j + 1] = loss[:, j] + inc
            trc[:, j + 1] = trc1
            trc_k = trc1
            alive = alive1
            act = act & ~dies
        return trc, loss


def forward_rc_paths(trc_star, cube, credit: CreditSetup, s, ec_curve=None, spread=None,
                     mva_curve=None) -> LossProcessPaths:
    """Reserve capital under continuous realization (RC = TRC in the funding term) on primary paths.

    ``trc_star`` is the replication solution; its ``parts`` give the MVA and FVA
    curves that are added to the path-wise conditional UCVA.
    """
    tables = cube.tables
    if len(tables.grid) != s.short_rate.shape[1]:
        raise ValueError("scenario grid does not match the exposure tables")
    K = len(tables.grid)
    t = tables.grid.array
    ec = np.zeros(K) if ec_curve is None else np.asarray(getattr(ec_curve, "values", ec_curve), dtype=float)
    lam = credit.funding_spread(t) if spread is None else np.broadcast_to(np.asarray(spread, float), (K,))
    mva = trc_star.parts["mva"] if mva_curve is None else mva_curve
    model = _LossModel(tables, credit, mva, trc_star.parts["fva"], ec, lam, credit.im_funding)
    cp_time = s.default_time[:, tables.set_entity]
    bank_time = s.default_time[:, -1]
    trc, loss = model.run(0, s.short_rate, s.step_integral, cp_time, bank_time)
    stop = np.minimum(s.default_index()[:, -1], K - 1)
    return LossProcessPaths(t, trc, trc - loss, loss, stop)


def apply_reset_schedule(unreset_rc, trc, schedule: LossRealizationSchedule, times):
    """Reserve capital reset to TRC at each schedule time, unchanged dynamics in between.

    Between consecutive resets ``t_l <= t < t_{l+1}`` the result is
    ``TRC(t_l) + RC~(t) - RC~(t_l)``, which equals the unreset path plus the
    accumulated TRC-minus-RC~ increments over the elapsed reset periods and is
    exactly ``TRC`` at the reset times. A reset at time 0 aligns the path with
    TRC from the start.
    """
    rc = np.asarray(unreset_rc, dtype=float)
    trc = np.asarray(trc, dtype=float)
    times = np.asarray(times, dtype=float)
    out = rc.copy()
    resets = [int(np.argmin(np.abs(times - x))) for x in schedule.reset_times]
    for x, i in zip(schedule.reset_times, resets):
        if abs(times[i] - x) > 1e-9:
            raise ValueError(f"reset time {x} is not on the grid")
    bounds = resets + [times.size]
    for i, nxt in zip(resets, bounds[1:]):
        out[..., i:nxt] = trc[..., i, None] + (rc[..., i:nxt] - rc[..., i, None])
    return out


# --- pipeline ----------------------------------------------------------------------------

def forward_rate_curve(params: ModelParams, grid: TimeGrid):
    """Deterministic short-rate curve that reproduces the initial discount curve step by step."""
    t = grid.array
    p = zero_bond(params, t, params.r0)
    r = np.empty(t.size)
    r[:-1] = -np.log(p[1:] / p[:-1]) / np.diff(t)
    r[-1] = r[-2]
    return TermStructure(t, r)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except XVAError as exc:
        raise StageError(name, exc) from exc


def _es_at_anchor(k, model, s, params, cfg, hazards, keep):
    grid = s.grid
    sub = spawn_secondary(s, params, k, cfg.secondary_count, cfg.seed, hazards)
    parent_alive = s.default_time[sub.parent, -1] > grid.times[k] + 1e-12
    idx = np.flatnonzero(parent_alive)
    if idx.size == 0:
        return 0.0, 0, None, None
    tb = model.tables
    cp_time = sub.default_time[idx][:, tb.set_entity]
    bank_time = sub.default_time[idx, -1]
    _, loss = model.run(k, sub.short_rate[idx], sub.step_integral[idx], cp_time, bank_time)
    t_end = sub.times[-1]
    inc = loss[:, -1]
    flags = bank_time > t_end + 1e-12
    n_surv = int(np.count_nonzero(flags))
    es = conditional_es(ConditionalSample(inc, flags, anchor_time=grid.times[k]), cfg.alpha) if n_surv else 0.0
    return es, n_surv, (inc if keep else None), (flags if keep else None)


def es_samples(model, s, params, cfg, hazards, keep=False):
    """ES of one-year loss increments at each anchor ``t_k`` with ``t_k + 1 <= horizon``."""
    grid = s.grid
    K = len(grid)
    anchors = [k for k in range(K - 1) if grid.times[k] + 1.0 <= grid.horizon_years + 1e-9]
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(lambda k: _es_at_anchor(k, model, s, params, cfg, hazards, keep), anchors))
    else:
        results = [_es_at_anchor(k, model, s, params, cfg, hazards, keep) for k in anchors]
    points = [None] * K
    incs = [None] * K
    flags = [None] * K
    for k, (es, n_surv, inc, fl) in zip(anchors, results):
        points[k] = (es, n_surv)
        incs[k] = inc
        flags[k] = fl
    return points, incs, flags


def es_curve_from_points(times, points, min_survivors=MIN_SURVIVORS):
    values = np.zeros(len(times))
    warnings = []
    last = None
    for k, pt in enumerate(points):
        if pt is None:
            if last is not None:
                values[k] = values[last]
            continue
        es, n_surv = pt
        if n_surv < min_survivors:
            warnings.append(f"ES at t={times[k]:g}: only {n_surv} surviving samples")
        values[k] = es
        last = k
    return TermStructure(np.asarray(times, float), values, tuple(warnings))


def _zero_report(portfolio, credit, params, cfg, grid, started):
    t = grid.array
    zero = Estimate(0.0, 0.0)
    metrics = {name: zero for name in METRICS}
    ts = {name: np.zeros(t.size) for name in ("ES", "KVA", "EC", "blended_lambda")}
    meta = _meta(cfg, grid, started, [])
    return XVAReport(metrics, t, ts, meta, [])


def _meta(cfg, grid, started, warnings):
    return {
        "seed": cfg.seed,
        "primary_count": cfg.primary_count,
        "secondary_count": cfg.secondary_count,
        "step": cfg.step,
        "horizon_years": grid.horizon_years,
        "grid_points": len(grid),
        "hurdle": cfg.hurdle,
        "passes": cfg.passes,
        "workers": cfg.workers,
        "elapsed_seconds": round(time.perf_counter() - started, 3),
        "warnings": list(warnings),
    }


def run_full(portfolio: Portfolio, credit: CreditSetup, params: ModelParams, config: EngineConfig,
             keep_paths=False):
    """Full one-pass XVA computation. Returns an :class:`XVAReport`.

    With ``keep_paths`` the report's ``meta["paths"]`` also holds the scenario
    set, cube and loss-process paths for diagnostics (not serialized).
    """
    cfg = config
    started = time.perf_counter()
    grid = cfg.grid_for(portfolio)
    if not portfolio.trades:
        return _zero_report(portfolio, credit, params, cfg, grid, started)
    t = grid.array
    K = len(grid)
    hazards = credit.hazard_curves()
    timings = {}

    def timed(name, fn, *a, **kw):
        t0 = time.perf_counter()
        out = _stage(name, fn, *a, **kw)
        timings[name] = round(time.perf_counter() - t0, 3)
        log.info("stage %s done in %.2fs", name, timings[name])
        return out

    s = timed("simulation", generate_primary, params, grid, cfg.primary_count, cfg.seed, hazards)
    tables = timed("tables", build_tables, params, portfolio, credit, grid, cfg.gap_shock,
                   cfg.rate_points, cfg.ucva_rate_points, cfg.quadrature_nodes)
    cube = timed("cube", build_cube, portfolio, s, credit, tables)

    bank_alive = cube.bank_alive
    u_paths = ucva_paths(cube, s)
    need = np.sum(cube.alive * cube.p, axis=2)
    lam = credit.funding_spread(t)
    mva_int = mva_integrand(cube, credit)
    mva_curve = bsde.linear_projection(mva_int, s.discount, bank_alive, t)
    trc_star = timed("replication", bsde.replication_bsde, need, u_paths, mva_curve, lam, s.discount,
                     bank_alive, t, None, cfg.tol, cfg.max_iter)

    warnings = []
    fva_curve = trc_star.parts["fva"]
    ec_prev = np.zeros(K)
    rate_curve = forward_rate_curve(params, grid)
    horizon = portfolio.maturity
    for pass_no in range(cfg.passes):
        model = _LossModel(tables, credit, mva_curve, fva_curve, ec_prev, lam, credit.im_funding)
        points, incs, flags = timed(f"es_pass{pass_no + 1}", es_samples, model, s, params, cfg, hazards, keep_paths)
        es = es_curve_from_points(t, points, cfg.min_survivors)
        kva = bsde.kva_linear(bsde.KVAInputs(es, rate_curve, cfg.hurdle, horizon))
        live = t < horizon - 1e-9
        if np.any(kva.value_curve.values[live] > es.values[live] + 1e-12):
            kva = timed("kva_bsde", bsde.kva_bsde, es, rate_curve, cfg.hurdle, horizon, cfg.tol, cfg.max_iter)
            warnings.append("KVA exceeded ES somewhere; used the nonlinear KVA solver")
        ec = np.maximum(es.values, kva.value_curve.values)
        fva = timed("fva", bsde.fva_fixed_point, need, ec, lam, s.discount, bank_alive, t,
                    u_paths + mva_curve[None, :], None, cfg.tol, cfg.max_iter)
        fva_curve = fva.value_curve.values
        ec_prev = ec
    warnings.extend(es.warnings)

    loss_paths = forward_rc_paths(trc_star, cube, credit, s, mva_curve=mva_curve)
    loss_paths.increments, loss_paths.survived, loss_paths.es_points = incs, flags, points

    u0 = ucva0(cube, s, cfg.blocks)
    mva_mc = batch_means(np.sum(mva_int[:, :-1] * s.discount[:, :-1] * bank_alive[:, :-1] * grid.dt, axis=1),
                         cfg.blocks)
    ftdcva, ftddva = ftd_cva_dva(cube, s, credit, cfg.ftddva_convention)
    nan = float("nan")
    fva0 = Estimate(fva.initial, nan)
    mva0 = Estimate(mva_mc.value, mva_mc.se)
    metrics = {
        "UCVA0": u0,
        "MVA0": mva0,
        "FVA_star0": Estimate(float(trc_star.parts["fva"][0]), nan),
        "FVA0": fva0,
        "KVA0": Estimate(kva.initial, nan),
        "FTDCVA0": ftdcva,
        "FTDDVA0": ftddva,
    }
    metrics["TRC0"] = Estimate(metrics["UCVA0"].value + mva0.value + fva0.value, nan)
    lam_bar = np.array([_alive_mean(blended_spread(cube, credit, k), bank_alive[:, k]) for k in range(K)])
    lam_im = np.array([_alive_mean(row, bank_alive[:, k]) for k, row in enumerate(im_spread_paths(cube, credit).T)])
    ts = {
        "ES": es.values,
        "KVA": kva.value_curve.values,
        "EC": ec,
        "blended_lambda": lam_bar,
        "im_funding_spread": lam_im,
        "funding_spread": lam,
        "FVA": fva_curve,
        "FVA_star": trc_star.parts["fva"],
        "MVA": mva_curve,
        "UCVA": trc_star.parts["ucva"],
    }
    l_end = loss_paths.terminal_loss
    meta = _meta(cfg, grid, started, warnings)
    meta["timings"] = timings
    meta["loss_terminal_mean"] = float(np.mean(l_end))
    meta["loss_terminal_se"] = batch_means(l_end, cfg.blocks).se
    if keep_paths:
        meta["paths"] = {"scenarios": s, "cube": cube, "loss": loss_paths, "trc_star": trc_star}
    return XVAReport(metrics, t, ts, meta, warnings)


def _alive_mean(x, alive):
    return float(np.mean(x[alive])) if alive.any() else 0.0


DELTA_METRICS = ("UCVA0", "MVA0", "FVA0", "KVA0", "FTDCVA0", "FTDDVA0", "TRC0")


def incremental_xva(base_portfolio: Portfolio, new_trade, credit, params, config, counterparty_id=None,
                    margin=None):
    """Report for the extended book with ``ftp`` holding component deltas and FTP = dTRC + dKVA.

    Both books use the same seed and credit setup, so the deltas are common
    random number differences. The grid horizon is fixed by the larger book.
    """
    extended = base_portfolio.with_trade(new_trade, counterparty_id, margin)
    cfg = config
    if cfg.horizon_years is None:
        grid = cfg.grid_for(extended)
        cfg = replace(cfg, horizon_years=grid.horizon_years)
    base = run_full(base_portfolio, credit, params, cfg)
    new = run_full(extended, credit, params, cfg)
    deltas = {m: new.value(m) - base.value(m) for m in DELTA_METRICS}
    deltas["FTP"] = deltas["TRC0"] + deltas["KVA0"]
    new.ftp = {"trade_id": new_trade.id, "deltas": deltas, "base": {m: base.value(m) for m in DELTA_METRICS}}
    return new
