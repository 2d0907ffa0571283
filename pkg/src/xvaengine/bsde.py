"""Backward solvers for KVA, FVA and the counterparty-risk replication equation.

All solvers work backward on the simulation grid. KVA inputs are deterministic
term structures; FVA conditional expectations use the deterministic-projection
convention, i.e. the value at ``t_k`` is a single number obtained by averaging
the integrand over the primary paths on which the bank is alive at ``t_k``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError
from .risk_measure import TermStructure

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200


@dataclass(frozen=True)
class KVAInputs:
    ec_curve: TermStructure
    rate_curve: TermStructure
    hurdle: float
    horizon: float | None = None

    def __post_init__(self):
        if self.hurdle < 0:
            raise ValueError("hurdle rate must be >= 0")
        if len(self.ec_curve) != len(self.rate_curve):
            raise ValueError("capital and rate curves must share the grid")
        if not np.allclose(self.ec_curve.times, self.rate_curve.times):
            raise ValueError("capital and rate curves must share the grid")

    @property
    def end_index(self):
        return _end_index(self.ec_curve.times, self.horizon)


@dataclass(frozen=True)
class BackwardSolution:
    value_curve: TermStructure
    iterations: int = 0
    residual: float = 0.0
    parts: dict = field(default_factory=dict, compare=False)

    @property
    def initial(self):
        return float(self.value_curve.values[0])


def _end_index(times, horizon):
    if horizon is None:
        return len(times) - 1
    idx = int(np.searchsorted(times, horizon - 1e-9, side="left"))
    return min(idx, len(times) - 1)


def _linear_backward(times, c, r, h, end):
    """Trapezoid recursion for h * int_t^end exp(-int (r + h)) C ds with a left-point rate."""
    k_val = np.zeros(times.size)
    dt = np.diff(times)
    for k in range(end - 1, -1, -1):
        d = np.exp(-(r[k] + h) * dt[k])
        k_val[k] = d * k_val[k + 1] + h * 0.5 * dt[k] * (c[k] + d * c[k + 1])
    return k_val


def kva_linear(inputs: KVAInputs) -> BackwardSolution:
    """Explicit KVA for a given capital curve; zero at and beyond the horizon."""
    t = inputs.ec_curve.times
    end = inputs.end_index
    k_val = _linear_backward(t, inputs.ec_curve.values, inputs.rate_curve.values, inputs.hurdle, end)
    return BackwardSolution(TermStructure(t, k_val))


def kva_bsde(es_curve: TermStructure, rate_curve: TermStructure, h, horizon=None,
             tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, method="stepwise") -> BackwardSolution:
    """KVA with capital ``max(ES, KVA)``.

    ``method="stepwise"`` solves the implicit trapezoid step exactly at each
    grid point (the step map is strictly increasing and piecewise linear in the
    unknown). ``method="picard"`` iterates ``K <- kva_linear(max(ES, K))`` from
    ``kva_linear(ES)``. Both return the fixed point of the same discrete
    equation; the residual reported is the sup-norm gap to that fixed point
    relative to ``max(1, |K|_inf)``.
    """
    inputs = KVAInputs(es_curve, rate_curve, h, horizon)
    t = es_curve.times
    es = es_curve.values
    r = rate_curve.values
    end = inputs.end_index
    if method == "stepwise":
        k_val = np.zeros(t.size)
        dt = np.diff(t)
        for k in range(end - 1, -1, -1):
            d = np.exp(-(r[k] + h) * dt[k])
            half = 0.5 * h * dt[k]
            base = d * k_val[k + 1] + half * d * max(es[k + 1], k_val[k + 1])
            above = base / (1.0 - half) if half < 1.0 else np.inf
            k_val[k] = above if above >= es[k] else base + half * es[k]
        iterations = 1
    elif method == "picard":
        k_val = _linear_backward(t, es, r, h, end)
        iterations = 0
        while True:
            nxt = _linear_backward(t, np.maximum(es, k_val), r, h, end)
            iterations += 1
            step = np.max(np.abs(nxt - k_val)) / max(1.0, np.max(np.abs(nxt)))
            k_val = nxt
            if step < tol:
                break
            if iterations >= max_iter:
                raise ConvergenceError("KVA Picard iteration did not converge", step, iterations)
    else:
        raise ValueError(f"unknown method {method!r}")
    check = _linear_backward(t, np.maximum(es, k_val), r, h, end)
    residual = float(np.max(np.abs(check - k_val)) / max(1.0, np.max(np.abs(k_val))))
    if residual > max(tol, 1e-12):
        raise ConvergenceError("KVA fixed point residual above tolerance", residual, iterations)
    return BackwardSolution(TermStructure(t, k_val), iterations, residual)


def linear_projection(integrand, discount, alive, times, end=None):
    """Deterministic projection of ``E_t int_t^end beta_t^-1 beta_s f_s ds`` (left point)."""
    f = np.asarray(integrand, dtype=float)
    n, K = f.shape
    end = K - 1 if end is None else end
    dt = np.diff(times)
    out = np.zeros(K)
    for k in range(end - 1, -1, -1):
        a = alive[:, k]
        if not a.any():
            continue
        carry = np.mean((discount[a, k + 1] / discount[a, k]) * alive[a, k + 1])
        out[k] = carry * out[k + 1] + dt[k] * np.mean(f[a, k])
    return out


def fva_fixed_point(funding_need, ec_curve, spread, discount, alive, times,
                    reserves=None, end=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> BackwardSolution:
    """FVA solving ``F_t = E_t int beta_t^-1 beta_s lambda_s (N_s - EC_s - R_s - F_s)^+ ds``.

    ``funding_need`` is the path-wise ``sum_i J^i P^i``, ``reserves`` the
    path-wise (or deterministic) UCVA + MVA, ``ec_curve`` a deterministic
    curve (``None`` or zeros for the replication FVA*), ``spread`` the funding
    spread per path or per time, ``alive`` the bank survival indicator.
    Backward Euler with the integrand at the left point; the implicit term is
    solved by Picard iteration at each step.
    """
    need = np.asarray(funding_need, dtype=float)
    n, K = need.shape
    times = np.asarray(times, dtype=float)
    end = K - 1 if end is None else end
    ec = np.zeros(K) if ec_curve is None else np.asarray(getattr(ec_curve, "values", ec_curve), dtype=float)
    res = np.zeros((n, K)) if reserves is None else np.broadcast_to(np.asarray(reserves, dtype=float), (n, K))
    lam = np.broadcast_to(np.asarray(spread, dtype=float), (n, K))
    dt = np.diff(times)
    out = np.zeros(K)
    total_iter = 0
    worst = 0.0
    for k in range(end - 1, -1, -1):
        a = alive[:, k]
        if not a.any():
            continue
        carry = np.mean((discount[a, k + 1] / discount[a, k]) * alive[a, k + 1]) * out[k + 1]
        x = need[a, k] - ec[k] - res[a, k]
        lk = lam[a, k]
        f = carry
        for it in range(1, max_iter + 1):
            nxt = carry + dt[k] * np.mean(lk * np.maximum(x - f, 0.0))
            step = abs(nxt - f) / max(1.0, abs(nxt))
            f = nxt
            if step < tol:
                break
        else:
            raise ConvergenceError(f"FVA step at t={times[k]:g} did not converge", step, it)
        total_iter += it
        worst = max(worst, step)
        out[k] = f
    return BackwardSolution(TermStructure(times, out), total_iter, worst)


def fva_pathwise(funding_need, ec_curve, spread, discount, alive, times, reserves=None, end=None,
                 tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Anticipative per-path FVA (each path solved on its own future); diagnostics only."""
    need = np.asarray(funding_need, dtype=float)
    n, K = need.shape
    end = K - 1 if end is None else end
    ec = np.zeros(K) if ec_curve is None else np.asarray(getattr(ec_curve, "values", ec_curve), dtype=float)
    res = np.zeros((n, K)) if reserves is None else np.broadcast_to(np.asarray(reserves, dtype=float), (n, K))
    lam = np.broadcast_to(np.asarray(spread, dtype=float), (n, K))
    dt = np.diff(times)
    out = np.zeros((n, K))
    for k in range(end - 1, -1, -1):
        a = alive[:, k]
        carry = discount[:, k + 1] / discount[:, k] * alive[:, k + 1] * out[:, k + 1]
        f = carry.copy()
        x = need[:, k] - ec[k] - res[:, k]
        for _ in range(max_iter):
            nxt = carry + dt[k] * lam[:, k] * np.maximum(x - f, 0.0)
            done = np.max(np.abs(nxt - f)) < tol * max(1.0, np.max(np.abs(nxt)))
            f = nxt
            if done:
                break
        out[:, k] = np.where(a, f, 0.0)
    return out


def replication_bsde(funding_need, ucva_paths, mva_curve, spread, discount, alive, times, end=None,
                     tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> BackwardSolution:
    """TRC* = UCVA + MVA + FVA*, with FVA* the FVA equation without capital.

    The returned curve is the bank-alive average of TRC*; ``parts`` holds the
    ``ucva`` average, ``mva`` and ``fva`` curves.
    """
    ucva_paths = np.asarray(ucva_paths, dtype=float)
    mva = np.asarray(mva_curve, dtype=float)
    reserves = ucva_paths + mva[None, :]
    fva = fva_fixed_point(funding_need, None, spread, discount, alive, times, reserves, end, tol, max_iter)
    K = len(times)
    u_avg = np.array([ucva_paths[alive[:, k], k].mean() if alive[:, k].any() else 0.0 for k in range(K)])
    total = u_avg + mva + fva.value_curve.values
    return BackwardSolution(TermStructure(times, total), fva.iterations, fva.residual,
                            {"ucva": u_avg, "mva": mva, "fva": fva.value_curve.values})
