"""Exposure cube, UCVA/FTD metrics, MVA integrand and the blended IM spread.

Netting-set values, margins and default losses depend on a scenario node only
through ``(t_k, r)``, so they are tabulated once per grid time on a uniform
short-rate grid and read back by linear interpolation. The same tables serve
primary paths, secondary sub-paths and the conditional UCVA pricer, which keeps
the loss process consistent between them.

The conditional UCVA of set ``i`` at ``(t_k, r)`` is

    (1 - R_i) * sum_{j > k} q_i(k, j) P(t_k, t_j; r) E^{t_j}[(Q_i - IM_i)^+(t_j, r_{t_j})]

with ``q_i(k, j)`` the probability that the counterparty's snapped default
lands on ``t_j`` given survival to ``t_k`` and the inner expectation taken under
the ``t_j``-forward measure by Gauss-Hermite quadrature.
"""

from dataclasses import dataclass

import numpy as np

from .credit import CreditSetup
from .errors import ConfigError
from .instruments import Portfolio, initial_margin, set_value, variation_margin
from .market_sim import ModelParams, ScenarioSet, TimeGrid, _coefficients, forward_moments, zero_bond
from .stats import Estimate, batch_means

FTDDVA_AS_WRITTEN = "as_written"
FTDDVA_OWN_DEFAULT = "own_default"


class RateTable:
    """Values on a uniform short-rate grid, one row per (grid time, netting set)."""

    def __init__(self, lo, step, values):
        self.lo = float(lo)
        self.step = float(step)
        self.values = values  # (K, S, nr)

    @property
    def r(self):
        return self.lo + self.step * np.arange(self.values.shape[-1])

    def __call__(self, k, r):
        """Interpolated values at grid time ``k``; result has shape ``r.shape + (S,)``."""
        r = np.asarray(r, dtype=float)
        pos = (r - self.lo) / self.step
        idx = np.clip(np.floor(pos).astype(np.int64), 0, self.values.shape[-1] - 2)
        w = (pos - idx)[..., None]
        row = self.values[k].T  # (nr, S)
        return row[idx] * (1.0 - w) + row[idx + 1] * w

    def at(self, k, r):
        """Interpolated values at per-point grid indices ``k`` and rates ``r``; shape ``r.shape + (S,)``."""
        k = np.asarray(k, dtype=np.int64)
        r = np.asarray(r, dtype=float)
        pos = (r - self.lo) / self.step
        idx = np.clip(np.floor(pos).astype(np.int64), 0, self.values.shape[-1] - 2)
        w = (pos - idx)[..., None]
        lo = self.values[k, :, idx]
        hi = self.values[k, :, idx + 1]
        return lo * (1.0 - w) + hi * w


def rate_range(params: ModelParams, grid: TimeGrid, width_sd=8.0, extra=0.0):
    a = params.mean_reversion
    t = grid.array
    decay, b, _, b2, _, _ = _coefficients(a, t)
    mean = params.r0 * decay + params.drift_constant * b
    sd = params.rate_vol * np.sqrt(b2)
    shift = abs(params.hist_drift_shift) * 1.5
    lo = float(np.min(mean - width_sd * sd)) - shift - extra
    hi = float(np.max(mean + width_sd * sd)) + shift + extra
    mid = 0.5 * (lo + hi)
    half = max(0.5 * (hi - lo), 0.01)
    return mid - half, mid + half


@dataclass
class ExposureTables:
    grid: TimeGrid
    set_ids: tuple
    set_entity: np.ndarray      # entity index of each set's counterparty
    recovery: np.ndarray        # per set
    mtm: RateTable
    p: RateTable
    q: RateTable
    im_received: RateTable
    im_posted: RateTable
    loss: RateTable             # (1 - R)(Q - IM)^+
    ucva: RateTable             # conditional UCVA per set (coarser rate grid)
    has_im: bool
    default_prob: np.ndarray = None  # P(snapped counterparty default lands on t_k), (S, K)

    @property
    def n_sets(self):
        return len(self.set_ids)


def _gauss_hermite(n):
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / np.sqrt(2.0 * np.pi)


def build_tables(params: ModelParams, portfolio: Portfolio, credit: CreditSetup, grid: TimeGrid,
                 gap_shock=None, n_rate=801, n_rate_ucva=121, n_quad=32) -> ExposureTables:
    """Tabulate values, margins, losses and conditional UCVA of every netting set."""
    names = credit.names
    sets = portfolio.netting_sets
    for ns in sets:
        if ns.counterparty_id not in credit.counterparties:
            raise ConfigError(f"netting set {ns.id}: no credit data for counterparty {ns.counterparty_id!r}")
    gap_shock = gap_shock or {}
    S, K = len(sets), len(grid)
    t = grid.array
    lo, hi = rate_range(params, grid)
    r = np.linspace(lo, hi, n_rate)
    step = r[1] - r[0]

    mtm = np.zeros((K, S, n_rate))
    vm = np.zeros_like(mtm)
    im_r = np.zeros_like(mtm)
    im_p = np.zeros_like(mtm)
    for i, ns in enumerate(sets):
        for k in range(K):
            mtm[k, i] = set_value(params, ns, t[k], r)
            vm[k, i] = variation_margin(mtm[k, i], ns.margin.vm_threshold)
            if ns.margin.im_received[0] != "none":
                im_r[k, i] = initial_margin(params, ns, ns.margin.im_received, t[k], r, +1.0)
            if ns.margin.im_posted[0] != "none":
                im_p[k, i] = initial_margin(params, ns, ns.margin.im_posted, t[k], r, -1.0)
    p = mtm - vm
    shock = np.array([float(gap_shock.get(ns.id, 0.0)) for ns in sets]).reshape(1, S, 1)
    q = p + shock
    recovery = np.array([credit.recovery(ns.counterparty_id) for ns in sets])
    loss = (1.0 - recovery)[None, :, None] * np.maximum(q - im_r, 0.0)

    set_entity = np.array([names.index(ns.counterparty_id) for ns in sets], dtype=int)
    curves = credit.hazard_curves()
    surv = np.array([curves[e].survival(t) for e in set_entity]).reshape(S, K)
    loss_table = RateTable(lo, step, loss)
    ucva = _conditional_ucva(params, grid, loss_table, surv, n_rate_ucva, n_quad)
    jump = np.zeros((S, K))
    jump[:, 1:] = surv[:, :-1] - surv[:, 1:]

    def table(v):
        return RateTable(lo, step, v)

    return ExposureTables(
        grid=grid, set_ids=tuple(ns.id for ns in sets), set_entity=set_entity, recovery=recovery,
        mtm=table(mtm), p=table(p), q=table(q), im_received=table(im_r), im_posted=table(im_p),
        loss=loss_table, ucva=ucva, has_im=any(ns.margin.has_im for ns in sets), default_prob=jump,
    )


def _conditional_ucva(params, grid, loss: RateTable, surv, n_rate, n_quad):
    K = len(grid)
    S = loss.values.shape[1]
    lo = loss.lo
    hi = loss.r[-1]
    ru = np.linspace(lo, hi, n_rate)
    out = np.zeros((K, S, n_rate))
    if S == 0:
        return RateTable(lo, ru[1] - ru[0], out)
    z, w = _gauss_hermite(n_quad)
    t = grid.array
    nr = loss.values.shape[-1]
    # probability that the snapped default lands on t_j, unconditional
    jump = np.zeros((S, K))
    jump[:, 1:] = surv[:, :-1] - surv[:, 1:]
    live = np.abs(loss.values).max(axis=-1) > 0  # (K, S)
    for k in range(K - 1):
        js = np.arange(k + 1, K)
        js = js[live[js].any(axis=1)]
        if js.size == 0:
            continue
        tau = t[js] - t[k]
        mean, var = forward_moments(params, tau, ru)            # (nu, nj), (nj,)
        bonds = zero_bond(params, tau, ru)                       # (nu, nj)
        x = mean[..., None] + np.sqrt(var)[None, :, None] * z   # (nu, nj, nq)
        pos = (x - lo) / loss.step
        idx = np.clip(np.floor(pos).astype(np.int64), 0, nr - 2)
        frac = pos - idx
        rows = loss.values[js]                                   # (nj, S, nr)
        jj = np.arange(js.size)[None, :, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.where(surv[:, k:k + 1] > 0, jump[:, js] / surv[:, k:k + 1], 0.0)  # (S, nj)
        for i in range(S):
            vals = rows[jj, i, idx] * (1.0 - frac) + rows[jj, i, idx + 1] * frac
            expect = vals @ w                                    # (nu, nj)
            out[k, i] = (bonds * expect) @ cond[i]
    return RateTable(lo, ru[1] - ru[0], out)


@dataclass
class ExposureCube:
    """Per (path, grid time, netting set) exposures plus default-loss events."""

    tables: ExposureTables
    mtm: np.ndarray
    vm: np.ndarray
    p: np.ndarray
    q: np.ndarray
    im_received: np.ndarray
    im_posted: np.ndarray
    alive: np.ndarray               # J^i at t_k, (n, K, S)
    bank_alive: np.ndarray          # J at t_k, (n, K)
    cp_default_index: np.ndarray    # (n, S); K when no default on the grid
    bank_default_index: np.ndarray  # (n,)
    loss: np.ndarray                # loss at the counterparty's default, (n, S)
    discount_at_default: np.ndarray  # (n, S)
    ucva_at_bank_default: np.ndarray  # (n,)

    @property
    def n_paths(self):
        return self.mtm.shape[0]

    def loss_events(self, path):
        """(time, set id, loss) for defaults up to and including the bank's grid point."""
        t = self.tables.grid.array
        K = len(t)
        out = []
        for i, sid in enumerate(self.tables.set_ids):
            d = self.cp_default_index[path, i]
            if d < K and d <= self.bank_default_index[path]:
                out.append((float(t[d]), sid, float(self.loss[path, i])))
        return sorted(out)


def build_cube(portfolio: Portfolio, s: ScenarioSet, credit: CreditSetup, tables: ExposureTables) -> ExposureCube:
    n, K = s.short_rate.shape
    S = tables.n_sets
    if len(portfolio.netting_sets) != S:
        raise ConfigError("exposure tables were built for a different portfolio")
    n_cp = len(credit.names)
    if s.default_time.shape[1] != n_cp + 1:
        raise ConfigError("scenario set default times do not match the credit setup")
    t = s.times
    shape = (n, K, S)
    mtm, p, q, im_r, im_p = (np.zeros(shape) for _ in range(5))
    for k in range(K):
        rk = s.short_rate[:, k]
        mtm[:, k] = tables.mtm(k, rk)
        p[:, k] = tables.p(k, rk)
        q[:, k] = tables.q(k, rk)
        if tables.has_im:
            im_r[:, k] = tables.im_received(k, rk)
            im_p[:, k] = tables.im_posted(k, rk)
    vm = mtm - p

    cp_time = s.default_time[:, tables.set_entity]              # (n, S)
    alive = cp_time[:, None, :] > t[None, :, None] + 1e-12
    bank_time = s.default_time[:, -1]
    bank_alive = bank_time[:, None] > t[None, :] + 1e-12
    didx = s.default_index()
    cp_idx = didx[:, tables.set_entity]
    bank_idx = didx[:, -1]

    rows = np.arange(n)
    safe = np.minimum(cp_idx, K - 1)
    hit = cp_idx < K
    r_at = s.short_rate[rows[:, None], safe]                    # (n, S)
    loss = np.zeros((n, S))
    for i in range(S):
        loss[:, i] = np.where(hit[:, i], tables.loss.at(safe[:, i], r_at[:, i])[:, i], 0.0)
    disc = np.where(hit, s.discount[rows[:, None], safe], 0.0)

    bk = np.minimum(bank_idx, K - 1)
    alive_b = alive[rows, bk]
    ucva_tau = np.where(bank_idx < K,
                        conditional_ucva_at(tables, bk, s.short_rate[rows, bk], alive_b), 0.0)
    return ExposureCube(tables, mtm, vm, p, q, im_r, im_p, alive, bank_alive, cp_idx, bank_idx,
                        loss, disc, ucva_tau)


def conditional_ucva(tables: ExposureTables, k, r, alive):
    """Conditional UCVA at grid index ``k`` for rates ``r`` and survival flags ``alive`` (..., S)."""
    return np.sum(tables.ucva(k, r) * alive, axis=-1)


def conditional_ucva_at(tables: ExposureTables, k, r, alive):
    """As :func:`conditional_ucva` with a grid index per point."""
    return np.sum(tables.ucva.at(k, r) * alive, axis=-1)


def ucva(cube: ExposureCube, s: ScenarioSet, t_index: int):
    """Path-wise conditional UCVA at ``t_index``; at ``t_index == 0`` also the MC estimate.

    Returns an array of per-path values, or an :class:`Estimate` of UCVA_0 from the
    realized discounted losses when ``t_index == 0``.
    """
    if t_index == 0:
        return ucva0(cube, s)
    return conditional_ucva(cube.tables, t_index, s.short_rate[:, t_index], cube.alive[:, t_index])


def ucva_paths(cube: ExposureCube, s: ScenarioSet):
    n, K, _ = cube.alive.shape
    out = np.empty((n, K))
    for k in range(K):
        out[:, k] = conditional_ucva(cube.tables, k, s.short_rate[:, k], cube.alive[:, k])
    return out


def _realized(cube, mask):
    return np.sum(np.where(mask, cube.discount_at_default * cube.loss, 0.0), axis=1)


def ucva0(cube: ExposureCube, s: ScenarioSet = None, blocks=20, method="conditional") -> Estimate:
    """UCVA_0 with a batch-means standard error.

    ``method="realized"`` averages the discounted losses at the simulated
    defaults. ``method="conditional"`` integrates each path's losses against
    the snapped default probabilities instead; default times are independent
    of the rate path in this model, so this is the conditional expectation of
    the realized estimator given the rates and has the same mean.
    """
    K = len(cube.tables.grid)
    if method == "realized":
        return batch_means(_realized(cube, cube.cp_default_index < K), blocks)
    if method != "conditional":
        raise ValueError(f"unknown method {method!r}")
    if s is None:
        raise ValueError("the conditional estimator needs the scenario set")
    tb = cube.tables
    n = s.n_paths
    total = np.zeros(n)
    for k in range(1, K):
        prob = tb.default_prob[:, k]
        if not prob.any():
            continue
        total += s.discount[:, k] * (tb.loss(k, s.short_rate[:, k]) @ prob)
    return batch_means(total, blocks)


def ftd_cva_dva(cube: ExposureCube, s: ScenarioSet, credit: CreditSetup,
                convention=FTDDVA_AS_WRITTEN):
    """First-to-default CVA and DVA at time 0 with batch-means errors.

    Counterparty defaults on the same grid point as the bank count as occurring
    first. ``convention="as_written"`` charges the DVA leg at counterparty
    defaults with ``(1 - R_i)(Q - IM_posted)^-``; ``"own_default"`` charges it at
    the bank's default on sets whose counterparty is still alive, with the bank's
    recovery and ``(Q + IM_posted)^-``.
    """
    K = len(cube.tables.grid)
    first = (cube.cp_default_index < K) & (cube.cp_default_index <= cube.bank_default_index[:, None])
    cva = batch_means(_realized(cube, first))
    n = cube.n_paths
    rows = np.arange(n)
    if convention == FTDDVA_AS_WRITTEN:
        d = np.minimum(cube.cp_default_index, K - 1)
        qd = cube.q[rows[:, None], d, np.arange(cube.q.shape[2])[None, :]]
        imd = cube.im_posted[rows[:, None], d, np.arange(cube.q.shape[2])[None, :]]
        amount = (1.0 - cube.tables.recovery) * np.maximum(imd - qd, 0.0)
        dva = np.sum(np.where(first, cube.discount_at_default * amount, 0.0), axis=1)
    elif convention == FTDDVA_OWN_DEFAULT:
        b = cube.bank_default_index
        hit = b < K
        bk = np.minimum(b, K - 1)
        qd = cube.q[rows, bk]
        imd = cube.im_posted[rows, bk]
        owed = (1.0 - credit.bank.recovery) * np.maximum(-(qd + imd), 0.0)
        alive = cube.cp_default_index > b[:, None]
        dva = np.where(hit, s.discount[rows, bk] * np.sum(owed * alive, axis=1), 0.0)
    else:
        raise ConfigError(f"unknown FTDDVA convention {convention!r}")
    return cva, batch_means(dva)


def blended_spread(cube: ExposureCube, credit: CreditSetup, t_index: int):
    """Specialist-lender IM funding spread per path; 0 where no IM is posted."""
    lam = float(credit.funding_spread(cube.tables.grid.array[t_index]))
    j = cube.alive[:, t_index]
    im = cube.im_posted[:, t_index]
    covered = np.minimum(np.maximum(-cube.q[:, t_index], 0.0), im)
    num = np.sum(j * covered, axis=1)
    den = np.sum(j * im, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, lam * num / den, 0.0)


def im_spread_paths(cube: ExposureCube, credit: CreditSetup):
    """IM funding spread per (path, time) under the credit setup's funding mode."""
    n, K, _ = cube.alive.shape
    if credit.im_funding == "blended":
        return np.stack([blended_spread(cube, credit, k) for k in range(K)], axis=1)
    return np.broadcast_to(credit.im_spread(cube.tables.grid.array), (n, K))


def mva_integrand(cube: ExposureCube, credit: CreditSetup):
    """IM funding spread times the posted IM of live sets, per (path, time)."""
    posted = np.sum(cube.alive * cube.im_posted, axis=2)
    return im_spread_paths(cube, credit) * posted
