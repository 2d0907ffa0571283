"""Nested scenario generation under a one-factor Gaussian (Vasicek) short rate.

The short rate and its time integral are simulated jointly with the exact
Gaussian transition, so discount factors are unbiased at any step size and
the analytic bond prices below are consistent with the simulated paths.
Primary paths are drawn on a fixed micro step (1/64 year when the grid allows
it) so that grids which refine each other share the same Brownian path.
"""

from dataclasses import dataclass, field
from math import isclose

import numpy as np
from scipy.special import ndtr

from . import rng
from .errors import ConfigError

MICRO_STEPS_PER_YEAR = 64
SECONDARY_STEPS_PER_YEAR = 8
_SERIES_CUTOFF = 1e-3


@dataclass(frozen=True)
class TimeGrid:
    times: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ConfigError("time grid needs at least two points")
        if t[0] != 0.0:
            raise ConfigError("time grid must start at 0")
        if np.any(np.diff(t) <= 0):
            raise ConfigError("time grid must be strictly increasing")

    @classmethod
    def uniform(cls, horizon_years, step):
        if step <= 0 or horizon_years <= 0:
            raise ConfigError("grid step and horizon must be positive")
        n = int(round(horizon_years / step))
        if not isclose(n * step, horizon_years, rel_tol=0, abs_tol=1e-9):
            raise ConfigError(f"step {step} does not divide horizon {horizon_years}")
        return cls(tuple(float(x) for x in np.linspace(0.0, horizon_years, n + 1)))

    @property
    def array(self):
        return np.asarray(self.times, dtype=float)

    @property
    def horizon_years(self):
        return self.times[-1]

    @property
    def dt(self):
        return np.diff(self.array)

    def __len__(self):
        return len(self.times)

    def index_at_or_after(self, t):
        """Index of the first grid point >= t (len(grid) if none)."""
        return int(np.searchsorted(self.array, t - 1e-9, side="left"))

    def one_year_index(self, k):
        """Nearest grid point at or after ``times[k] + 1``, capped at the horizon."""
        return min(self.index_at_or_after(self.times[k] + 1.0), len(self.times) - 1)


@dataclass(frozen=True)
class ModelParams:
    r0: float = 0.02
    mean_reversion: float = 0.1
    rate_vol: float = 0.01
    long_term_rate: float = 0.03
    hist_drift_shift: float = 0.0
    correlation_matrix: tuple | None = None

    def __post_init__(self):
        if self.rate_vol < 0:
            raise ConfigError("rate_vol must be >= 0")
        if self.mean_reversion < 0:
            raise ConfigError("mean_reversion must be >= 0")
        if self.correlation_matrix is not None:
            correlation_root(self.correlation_matrix)

    @property
    def drift_constant(self):
        return self.mean_reversion * self.long_term_rate


def correlation_root(matrix):
    """Matrix square root ``L`` with ``L @ L.T == matrix``; validates the matrix."""
    c = np.asarray(matrix, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ConfigError("correlation matrix must be square")
    if not np.allclose(c, c.T, atol=1e-12):
        raise ConfigError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(c), 1.0, atol=1e-12):
        raise ConfigError("correlation matrix must have unit diagonal")
    if np.any(np.abs(c) > 1.0 + 1e-12):
        raise ConfigError("correlations must lie in [-1, 1]")
    w, v = np.linalg.eigh(c)
    if w.min() < -1e-10:
        raise ConfigError(f"correlation matrix is not positive semi-definite (min eigenvalue {w.min():.3g})")
    return v * np.sqrt(np.clip(w, 0.0, None))


# --- Vasicek transition coefficients -------------------------------------------------

def _coefficients(a, tau):
    """Return (decay, B, C2, var_r/sigma^2, var_i/sigma^2, cov/sigma^2) for horizon tau.

    B = (1 - e^{-a tau})/a, C2 = (tau - B)/a; the variances are those of r_tau and
    of the integral of r over [0, tau] per unit sigma^2.
    """
    tau = np.asarray(tau, dtype=float)
    x = a * tau
    decay = np.exp(-x)
    b = tau * (1 - x / 2 + x**2 / 6 - x**3 / 24)
    c2 = tau**2 * (0.5 - x / 6 + x**2 / 24 - x**3 / 120)
    b2 = tau * (1 - x + 2 * x**2 / 3 - x**3 / 3)
    var_i = tau**3 * (1 / 3 - x / 4 + 7 * x**2 / 60)
    big = x >= _SERIES_CUTOFF
    if np.any(big):
        xb, tb = x[big] if x.ndim else x, tau[big] if tau.ndim else tau
        eb = -np.expm1(-xb) / a
        e2 = -np.expm1(-2 * xb) / (2 * a)
        vals = (eb, (tb - eb) / a, e2, (tb - 2 * eb + e2) / a**2)
        if x.ndim:
            for arr, v in zip((b, c2, b2, var_i), vals):
                arr[big] = v
        else:
            b, c2, b2, var_i = vals
    cov = b**2 / 2
    return decay, b, c2, b2, var_i, cov


def zero_bond(params: ModelParams, tau, r):
    """Risk-neutral zero-coupon bond price P(t, t + tau) given r_t = r."""
    _, b, c2, _, var_i, _ = _coefficients(params.mean_reversion, tau)
    mean_i = np.multiply.outer(r, b) + params.drift_constant * c2
    return np.exp(-mean_i + 0.5 * params.rate_vol**2 * var_i)


def forward_moments(params: ModelParams, tau, r):
    """Mean and variance of r_{t+tau} given r_t = r under the (t+tau)-forward measure."""
    decay, b, _, b2, _, cov = _coefficients(params.mean_reversion, tau)
    s2 = params.rate_vol**2
    mean = np.multiply.outer(r, decay) + params.drift_constant * b - s2 * cov
    return mean, s2 * b2


def exact_step(params: ModelParams, dt, r, z_r, z_i, drift_shift=0.0):
    """One exact transition of (r, integral of r) over ``dt``."""
    decay, b, c2, b2, var_i, cov = _coefficients(params.mean_reversion, dt)
    c = params.drift_constant + drift_shift
    s = params.rate_vol
    sd_r = s * np.sqrt(b2)
    r_next = r * decay + c * b
    integral = r * b + c * c2
    if s > 0:
        beta = cov / b2
        resid = max(var_i - beta * cov, 0.0)
        r_next = r_next + sd_r * z_r
        integral = integral + s * (beta * np.sqrt(b2) * z_r + np.sqrt(resid) * z_i)
    return r_next, integral


# --- scenario sets --------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioSet:
    """Paths of short rate, discount factor and snapped default times.

    For a secondary set, ``anchor_index`` is the grid index the sub-paths branch
    from, the time axis is ``grid.times[anchor_index:anchor_index + steps + 1]``,
    ``discount`` is relative to the anchor and ``parent[p]`` is the primary path.
    """

    grid: TimeGrid
    primary_count: int
    secondary_count: int
    short_rate: np.ndarray
    discount: np.ndarray
    default_time: np.ndarray
    seed: int
    anchor_index: int = 0
    parent: np.ndarray | None = None
    step_integral: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("short_rate", "discount", "default_time", "step_integral", "parent"):
            arr = getattr(self, name)
            if isinstance(arr, np.ndarray):
                arr.flags.writeable = False

    @property
    def n_paths(self):
        return self.short_rate.shape[0]

    @property
    def times(self):
        return self.grid.array[self.anchor_index:self.anchor_index + self.short_rate.shape[1]]

    def default_index(self):
        """Grid index (in this set's local time axis) of each default; len(times) if none."""
        t = self.times
        idx = np.searchsorted(t, self.default_time - 1e-9, side="left")
        return np.where(np.isfinite(self.default_time), idx, len(t))


def _micro_layout(grid: TimeGrid, per_year=MICRO_STEPS_PER_YEAR):
    dt = grid.dt
    sub = dt * per_year
    if np.allclose(sub, np.round(sub), atol=1e-9) and np.all(np.round(sub) >= 1):
        counts = np.round(sub).astype(int)
    else:
        counts = np.ones(len(dt), dtype=int)
    return counts


def _snap(times, tau):
    """Snap default times to the next grid point; beyond the last point -> inf."""
    idx = np.searchsorted(times, tau - 1e-12, side="left")
    out = np.full(tau.shape, np.inf)
    ok = idx < len(times)
    out[ok] = times[idx[ok]]
    return out


def _default_clocks(hazards, normals, root, start=None):
    """Gaussian-copula default clocks.

    ``normals`` has the entity axis last; returns unsnapped default times. When
    ``start`` (per-entity integrated hazard at the anchor) is given, the clocks
    are conditional on survival to the anchor.
    """
    z = normals @ root.T
    e = -np.log(ndtr(z))
    out = np.empty(z.shape)
    for j, curve in enumerate(hazards):
        x = e[..., j] if start is None else start[..., j] + e[..., j]
        out[..., j] = curve.inverse_cumulative(x)
    return out


def generate_primary(params: ModelParams, grid: TimeGrid, n: int, seed: int, hazards=()) -> ScenarioSet:
    """Primary risk-neutral paths and correlated default times for ``hazards``."""
    if n < 1:
        raise ValueError("primary path count must be >= 1")
    hazards = list(hazards)
    n_ent = len(hazards)
    root = _entity_root(params, n_ent)
    counts = _micro_layout(grid)
    dt = grid.dt
    n_micro = int(counts.sum())

    z = np.empty((n, n_micro, 2))
    dz = np.empty((n, n_ent))
    for p in range(n):
        z[p] = rng.stream(seed, rng.PRIMARY_RATES, p).standard_normal((n_micro, 2))
        dz[p] = rng.stream(seed, rng.PRIMARY_DEFAULTS, p).standard_normal(n_ent)

    K = len(grid)
    rates = np.empty((n, K))
    step_int = np.zeros((n, K - 1))
    rates[:, 0] = params.r0
    r = np.full(n, float(params.r0))
    m = 0
    for k in range(K - 1):
        h = dt[k] / counts[k]
        acc = np.zeros(n)
        for _ in range(counts[k]):
            r, integral = exact_step(params, h, r, z[:, m, 0], z[:, m, 1])
            acc += integral
            m += 1
        rates[:, k + 1] = r
        step_int[:, k] = acc
    discount = np.ones((n, K))
    discount[:, 1:] = np.exp(-np.cumsum(step_int, axis=1))

    if n_ent:
        raw = _default_clocks(hazards, dz, root)
        default_time = _snap(grid.array, raw)
    else:
        default_time = np.empty((n, 0))
    return ScenarioSet(grid, n, 1, rates, discount, default_time, seed, step_integral=step_int)


def _entity_root(params, n_ent):
    if params.correlation_matrix is None:
        return np.eye(n_ent)
    c = np.asarray(params.correlation_matrix, dtype=float)
    if c.shape != (n_ent, n_ent):
        raise ConfigError(f"correlation matrix is {c.shape}, expected {(n_ent, n_ent)}")
    return correlation_root(c)


def anchor_key(t):
    """Stream index for an anchor time; identical across grids sharing the point."""
    return int(round(t * 1_000_000))


def spawn_secondary(base: ScenarioSet, params: ModelParams, t_index: int, m: int, seed: int,
                    hazards=(), end_index=None) -> ScenarioSet:
    """Branch ``m`` sub-paths from every primary path at grid index ``t_index``.

    Sub-paths run under the risk-neutral dynamics with ``hist_drift_shift`` added
    to the rate drift, on the grid points up to ``end_index`` (default: the first
    point one year or more after the anchor). Rates are drawn on a 1/8-year
    sub-step when the grid allows it, so refined grids see the same sub-paths. Entities alive at the anchor get
    fresh copula clocks conditional on survival; earlier defaults are inherited.
    """
    grid = base.grid
    K = len(grid)
    if not 0 <= t_index < K - 1:
        raise ValueError(f"t_index {t_index} leaves no forward window on a {K}-point grid")
    if m < 1:
        raise ValueError("secondary count must be >= 1")
    end = grid.one_year_index(t_index) if end_index is None else end_index
    steps = end - t_index
    n = base.n_paths
    hazards = list(hazards)
    n_ent = len(hazards)
    t0 = grid.times[t_index]
    key = anchor_key(t0)

    counts = _micro_layout(grid, SECONDARY_STEPS_PER_YEAR)[t_index:end]
    z = rng.stream(seed, rng.SECONDARY_RATES, key).standard_normal((n, m, int(counts.sum()), 2))
    rates = np.empty((n, m, steps + 1))
    step_int = np.empty((n, m, steps))
    r = np.repeat(base.short_rate[:, t_index][:, None], m, axis=1)
    rates[..., 0] = r
    dt = grid.dt[t_index:end]
    i = 0
    for j in range(steps):
        h = dt[j] / counts[j]
        acc = np.zeros((n, m))
        for _ in range(counts[j]):
            r, integral = exact_step(params, h, r, z[..., i, 0], z[..., i, 1], params.hist_drift_shift)
            acc += integral
            i += 1
        rates[..., j + 1] = r
        step_int[..., j] = acc
    discount = np.ones((n, m, steps + 1))
    discount[..., 1:] = np.exp(-np.cumsum(step_int, axis=-1))

    times = grid.array[t_index:end + 1]
    if n_ent:
        root = _entity_root(params, n_ent)
        dz = rng.stream(seed, rng.SECONDARY_DEFAULTS, key).standard_normal((n, m, n_ent))
        start = np.array([c.cumulative(t0) for c in hazards])
        raw = _default_clocks(hazards, dz, root, start=np.broadcast_to(start, (n, m, n_ent)))
        fresh = _snap(times, raw)
        inherited = np.repeat(base.default_time[:, None, :], m, axis=1)
        default_time = np.where(inherited > t0, fresh, inherited)
    else:
        default_time = np.empty((n, m, 0))
    parent = np.repeat(np.arange(n), m)
    return ScenarioSet(
        grid, n, m,
        rates.reshape(n * m, steps + 1),
        discount.reshape(n * m, steps + 1),
        default_time.reshape(n * m, n_ent),
        seed, anchor_index=t_index, parent=parent,
        step_integral=step_int.reshape(n * m, steps),
    )


def discount_between(s: ScenarioSet, path: int, i: int, j: int) -> float:
    """beta_j / beta_i on ``path``."""
    if i > j:
        raise ValueError(f"discount_between needs i <= j, got {i} > {j}")
    if i == j:
        return 1.0
    return float(s.discount[path, j] / s.discount[path, i])
