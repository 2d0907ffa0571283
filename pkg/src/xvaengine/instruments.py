"""Interest-rate swaps, netting sets and margin schemes.

Swaps are valued analytically under the Vasicek model. The floating leg pays
the overnight rate with continuous settlement, so its value after inception is
``N (1 - P(t, T))`` and the mark-to-market is a function of ``(t, r_t)`` only.
The fixed leg pays on a regular schedule with year fractions equal to the
schedule's time differences (ACT/365F on a year-fraction time axis).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError
from .market_sim import ModelParams, ScenarioSet, forward_moments, zero_bond

PAYER = "payer-swap"
RECEIVER = "receiver-swap"
TRADE_TYPES = (PAYER, RECEIVER)
PAR = "par"


@dataclass(frozen=True)
class Trade:
    id: str
    trade_type: str
    notional: float
    maturity_years: float
    netting_set_id: str
    fixed_rate: float | str = PAR
    fixed_tenor_months: int = 6
    float_tenor_months: int = 3

    def __post_init__(self):
        if self.trade_type not in TRADE_TYPES:
            raise ConfigError(f"trade {self.id}: unknown trade type {self.trade_type!r}")
        if not self.notional > 0:
            raise ConfigError(f"trade {self.id}: notional must be positive")
        if not self.maturity_years > 0:
            raise ConfigError(f"trade {self.id}: maturity must be positive")
        if self.fixed_rate != PAR and not np.isfinite(float(self.fixed_rate)):
            raise ConfigError(f"trade {self.id}: bad fixed rate {self.fixed_rate!r}")

    @property
    def sign(self):
        """+1 when the bank receives fixed."""
        return 1.0 if self.trade_type == RECEIVER else -1.0

    def fixed_schedule(self):
        step = self.fixed_tenor_months / 12.0
        n = int(round(self.maturity_years / step))
        pay = step * np.arange(1, n + 1)
        if n == 0 or abs(pay[-1] - self.maturity_years) > 1e-9:
            pay = np.append(pay[pay < self.maturity_years - 1e-9], self.maturity_years)
        accrual = np.diff(np.concatenate([[0.0], pay]))
        return pay, accrual


@dataclass(frozen=True)
class MarginSpec:
    """Variation and initial margin terms of a netting set.

    IM models: ``("none",)``, ``("fixed", amount)`` or ``("quantile", alpha, horizon_years)``.
    """

    vm_threshold: float = float("inf")
    im_received: tuple = ("none",)
    im_posted: tuple = ("none",)

    def __post_init__(self):
        if not self.vm_threshold >= 0:
            raise ConfigError("VM threshold must be >= 0")
        for model in (self.im_received, self.im_posted):
            kind = model[0]
            if kind == "none":
                continue
            if kind == "fixed":
                if len(model) != 2 or model[1] < 0:
                    raise ConfigError(f"bad fixed IM model {model}")
            elif kind == "quantile":
                if len(model) != 3 or not 0 < model[1] < 1 or model[2] <= 0:
                    raise ConfigError(f"bad quantile IM model {model}")
            else:
                raise ConfigError(f"unknown IM model {kind!r}")

    @property
    def has_im(self):
        return self.im_received[0] != "none" or self.im_posted[0] != "none"


@dataclass(frozen=True)
class NettingSet:
    id: str
    counterparty_id: str
    trades: tuple = ()
    margin: MarginSpec = field(default_factory=MarginSpec)

    def __post_init__(self):
        for t in self.trades:
            if t.netting_set_id != self.id:
                raise ConfigError(f"trade {t.id} belongs to {t.netting_set_id}, not {self.id}")

    @property
    def maturity(self):
        return max((t.maturity_years for t in self.trades), default=0.0)


@dataclass(frozen=True)
class Portfolio:
    netting_sets: tuple = ()

    @property
    def trades(self):
        return [t for s in self.netting_sets for t in s.trades]

    @property
    def maturity(self):
        return max((s.maturity for s in self.netting_sets), default=0.0)

    def set_index(self, set_id):
        for i, s in enumerate(self.netting_sets):
            if s.id == set_id:
                return i
        raise KeyError(set_id)

    def with_trade(self, trade, counterparty_id=None, margin=None):
        """Copy of the portfolio with ``trade`` added to its netting set."""
        if any(t.id == trade.id for t in self.trades):
            raise ConfigError(f"trade {trade.id} is already in the portfolio")
        sets = list(self.netting_sets)
        for i, s in enumerate(sets):
            if s.id == trade.netting_set_id:
                sets[i] = NettingSet(s.id, s.counterparty_id, s.trades + (trade,), s.margin)
                break
        else:
            if counterparty_id is None:
                raise ConfigError(f"new netting set {trade.netting_set_id} needs a counterparty")
            sets.append(NettingSet(trade.netting_set_id, counterparty_id, (trade,), margin or MarginSpec()))
        return Portfolio(tuple(sets))

    def without_trade(self, trade_id):
        sets = []
        for s in self.netting_sets:
            kept = tuple(t for t in s.trades if t.id != trade_id)
            if kept:
                sets.append(NettingSet(s.id, s.counterparty_id, kept, s.margin))
        return Portfolio(tuple(sets))


def par_rate(params: ModelParams, trade: Trade) -> float:
    pay, acc = trade.fixed_schedule()
    bonds = zero_bond(params, pay, params.r0)
    annuity = float(np.sum(acc * bonds))
    return (1.0 - float(zero_bond(params, trade.maturity_years, params.r0))) / annuity


def fixed_rate_of(params, trade):
    return par_rate(params, trade) if trade.fixed_rate == PAR else float(trade.fixed_rate)


def trade_value(params: ModelParams, trade: Trade, t: float, r, strike=None):
    """Analytic value of ``trade`` at time ``t`` for short rate(s) ``r``; 0 once matured."""
    r = np.asarray(r, dtype=float)
    if t >= trade.maturity_years - 1e-12:
        return np.zeros(r.shape)
    k = fixed_rate_of(params, trade) if strike is None else strike
    pay, acc = trade.fixed_schedule()
    live = pay > t + 1e-12
    bonds = zero_bond(params, pay[live] - t, r)
    fixed = k * bonds @ acc[live]
    floating = 1.0 - bonds[..., -1]
    return trade.sign * trade.notional * (fixed - floating)


def set_value(params, netting_set: NettingSet, t, r):
    r = np.asarray(r, dtype=float)
    total = np.zeros(r.shape)
    for trade in netting_set.trades:
        total = total + trade_value(params, trade, t, r)
    return total


def mtm(params: ModelParams, netting_set: NettingSet, s: ScenarioSet, path: int, t_index: int) -> float:
    """Mark-to-market of a netting set on one scenario node."""
    t = s.times[t_index]
    return float(set_value(params, netting_set, t, s.short_rate[path, t_index]))


def variation_margin(value, threshold):
    """Sign-preserving truncation of the MtM beyond the threshold."""
    value = np.asarray(value, dtype=float)
    if np.isinf(threshold):
        return np.zeros(value.shape)
    return np.sign(value) * np.maximum(np.abs(value) - threshold, 0.0)


_QUANTILE_NODES = 201


def initial_margin(params, netting_set, model, t, r, direction=1.0):
    """IM amount for ``model`` at ``(t, r)``.

    The quantile model takes the level-``alpha`` quantile (e.g. 0.99) of the set's value move
    over the margin horizon (received IM, ``direction=+1``) or of its negative
    (posted IM, ``direction=-1``), using the exact Gaussian law of the rate.
    """
    r = np.asarray(r, dtype=float)
    kind = model[0]
    if kind == "none" or t >= netting_set.maturity - 1e-12:
        return np.zeros(r.shape)
    if kind == "fixed":
        return np.full(r.shape, float(model[1]))
    alpha, horizon = float(model[1]), float(model[2])
    # equiprobable nodes of the rate after the horizon (risk-neutral, undiscounted)
    u = (np.arange(_QUANTILE_NODES) + 0.5) / _QUANTILE_NODES
    z = ndtri(u)
    mean, var = forward_moments(params, horizon, r)
    # spot-measure mean differs from the forward one by the bond convexity term
    mean = mean + params.rate_vol**2 * _spot_correction(params, horizon)
    shifted = mean[..., None] + np.sqrt(var) * z
    later = set_value(params, netting_set, t + horizon, shifted)
    now = set_value(params, netting_set, t, r)[..., None]
    move = direction * (later - now)
    q = np.quantile(move, alpha, axis=-1, method="inverted_cdf")
    return np.maximum(q, 0.0)


def _spot_correction(params, tau):
    a = params.mean_reversion
    if a * tau < 1e-6:
        return tau**2 / 2
    return (1 - np.exp(-a * tau)) ** 2 / (2 * a**2)
