"""Credit curves: CDS spreads to piecewise-constant hazard rates."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

BANK = "Bank"


@dataclass(frozen=True)
class HazardCurve:
    """Piecewise-constant hazard rate.

    ``hazards[j]`` applies on ``(tenors[j-1], tenors[j]]`` with ``tenors[-1] = 0``;
    the last hazard extends flat beyond the last tenor.
    """

    tenors: tuple
    hazards: tuple

    def __post_init__(self):
        t = np.asarray(self.tenors, dtype=float)
        h = np.asarray(self.hazards, dtype=float)
        if t.ndim != 1 or t.size == 0 or t.size != h.size:
            raise ConfigError("hazard curve needs matching, non-empty tenors and hazards")
        if np.any(np.diff(t) <= 0) or t[0] <= 0:
            raise ConfigError(f"hazard tenors must be positive and strictly increasing: {self.tenors}")
        if np.any(h < 0) or not np.all(np.isfinite(h)):
            raise ConfigError("hazard rates must be finite and nonnegative")

    @classmethod
    def flat(cls, hazard, tenor=1.0):
        return cls((float(tenor),), (float(hazard),))

    @property
    def _knots(self):
        t = np.asarray(self.tenors, dtype=float)
        h = np.asarray(self.hazards, dtype=float)
        starts = np.concatenate([[0.0], t[:-1]])
        cum = np.concatenate([[0.0], np.cumsum(h[:-1] * np.diff(np.concatenate([[0.0], t]))[:-1])])
        return starts, h, cum

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(np.asarray(self.tenors), t, side="left")
        idx = np.minimum(idx, len(self.tenors) - 1)
        return np.asarray(self.hazards, dtype=float)[idx]

    def cumulative(self, t):
        """Integrated hazard from 0 to ``t``."""
        t = np.asarray(t, dtype=float)
        starts, h, cum = self._knots
        idx = np.searchsorted(starts, t, side="right") - 1
        idx = np.clip(idx, 0, len(h) - 1)
        return cum[idx] + h[idx] * np.maximum(t - starts[idx], 0.0)

    def survival(self, t):
        return np.exp(-self.cumulative(t))

    def inverse_cumulative(self, x):
        """Time at which the integrated hazard reaches ``x`` (``inf`` if never)."""
        x = np.asarray(x, dtype=float)
        starts, h, cum = self._knots
        idx = np.searchsorted(cum, x, side="right") - 1
        idx = np.clip(idx, 0, len(h) - 1)
        rate = h[idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = starts[idx] + (x - cum[idx]) / rate
        # zero hazard on the final segment never gets there
        t = np.where(rate > 0, t, np.where(x <= cum[idx], starts[idx], np.inf))
        return t


@dataclass(frozen=True)
class EntityCredit:
    name: str
    tenors: tuple
    spreads_bps: tuple
    recovery: float = 0.4

    def __post_init__(self):
        if not 0.0 <= self.recovery < 1.0:
            raise ConfigError(f"{self.name}: recovery must lie in [0, 1), got {self.recovery}")
        if any(s < 0 for s in self.spreads_bps):
            raise ConfigError(f"{self.name}: spreads must be nonnegative")
        if len(self.tenors) != len(self.spreads_bps) or not self.tenors:
            raise ConfigError(f"{self.name}: tenors and spreads must match")
        if any(b <= a for a, b in zip(self.tenors, self.tenors[1:])):
            raise ConfigError(f"{self.name}: tenors must be strictly increasing")

    @property
    def hazard_curve(self) -> HazardCurve:
        """Segment-wise credit triangle: hazard = spread / (1 - R)."""
        s = np.asarray(self.spreads_bps, dtype=float) * 1e-4
        return HazardCurve(tuple(float(t) for t in self.tenors), tuple(s / (1.0 - self.recovery)))


@dataclass(frozen=True)
class CreditSetup:
    """Counterparty and bank credit data plus funding-spread conventions.

    ``im_funding`` is ``"unsecured"`` (IM funded at the unsecured spread) or
    ``"blended"`` (specialist lender, spread blended by the posted-IM cover).
    """

    counterparties: dict
    bank: EntityCredit
    funding_spread_override: float | None = None
    im_funding: str = "unsecured"
    im_spread_override: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.im_funding not in ("unsecured", "blended"):
            raise ConfigError(f"unknown IM funding mode {self.im_funding!r}")

    @property
    def names(self):
        return list(self.counterparties)

    @property
    def entities(self):
        """Counterparties in file order, then the bank."""
        return [*self.counterparties.values(), self.bank]

    def hazard_curves(self):
        return [e.hazard_curve for e in self.entities]

    def recovery(self, name):
        return self.counterparties[name].recovery

    def funding_spread(self, t):
        """Unsecured funding spread: bank hazard times (1 - R), unless overridden."""
        t = np.asarray(t, dtype=float)
        if self.funding_spread_override is not None:
            return np.full(t.shape, float(self.funding_spread_override))
        return self.bank.hazard_curve.hazard(t) * (1.0 - self.bank.recovery)

    def im_spread(self, t):
        """Deterministic IM funding spread used in unsecured mode."""
        t = np.asarray(t, dtype=float)
        if self.im_spread_override is not None:
            return np.full(t.shape, float(self.im_spread_override))
        return self.funding_spread(t)
