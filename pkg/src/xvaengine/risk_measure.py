"""Survival-conditioned VaR/ES of loss increments and the projected ES term structure."""

from dataclasses import dataclass, field

import numpy as np

from .errors import EstimationError

ALPHA = 0.025
MIN_SURVIVORS = 200


@dataclass(frozen=True)
class ConditionalSample:
    """Loss increments with bank-survival flags and probability weights.

    ``weights`` defaults to equal weights; it must be positive and sum to one.
    """

    values: np.ndarray
    survived: np.ndarray
    weights: np.ndarray | None = None
    anchor_time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        s = np.asarray(self.survived, dtype=bool).ravel()
        if v.shape != s.shape:
            raise ValueError("values and survival flags must have the same length")
        if self.weights is None:
            w = np.full(v.shape, 1.0 / max(v.size, 1))
        else:
            w = np.asarray(self.weights, dtype=float).ravel()
            if w.shape != v.shape:
                raise ValueError("weights must match values")
            if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("weights must be positive and sum to one")
        if not np.all(np.isfinite(v)):
            raise ValueError("loss increments must be finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "survived", s)
        object.__setattr__(self, "weights", w)

    def survivors(self):
        """Surviving values sorted ascending and their conditional weights."""
        keep = self.survived
        if not keep.any():
            raise EstimationError(f"no surviving samples at t={self.anchor_time:g}")
        v = self.values[keep]
        w = self.weights[keep]
        order = np.argsort(v, kind="stable")
        v, w = v[order], w[order]
        return v, w / w.sum()


def _var_from_sorted(v, w, alpha):
    # P(X >= v_j | survived) for each sorted position, then keep first index of each atom
    tail = np.cumsum(w[::-1])[::-1]
    first = np.ones(v.size, dtype=bool)
    first[1:] = v[1:] != v[:-1]
    ok = first & (tail <= alpha * (1.0 + 1e-12))
    if ok.any():
        return v[np.argmax(ok)]
    return v[-1]


def conditional_var(sample: ConditionalSample, alpha=ALPHA) -> float:
    """Smallest atom ``l`` with ``P(X >= l | survived) <= alpha``; the top atom if none qualifies."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    v, w = sample.survivors()
    return float(_var_from_sorted(v, w, alpha))


def conditional_es(sample: ConditionalSample, alpha=ALPHA) -> float:
    """Mean of the surviving increments at or above the conditional VaR."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    v, w = sample.survivors()
    var = _var_from_sorted(v, w, alpha)
    tail = v >= var
    # rescale so equal weights become exactly one and the mean carries no weight rounding
    wt = w[tail] / w[tail].max()
    return float(np.dot(v[tail], wt) / wt.sum())


@dataclass(frozen=True)
class TermStructure:
    """Deterministic function of time on a grid."""

    times: np.ndarray
    values: np.ndarray
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("term structure times and values must be 1-d and of equal length")
        if not np.all(np.isfinite(v)):
            raise ValueError("term structure values must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, times, value):
        t = np.asarray(times, dtype=float)
        return cls(t, np.full(t.shape, float(value)))

    def __len__(self):
        return self.values.size

    def __getitem__(self, k):
        return self.values[k]


def es_term_structure(loss_paths, s, alpha=ALPHA, min_survivors=MIN_SURVIVORS) -> TermStructure:
    """ES of pooled one-year loss increments at each anchor, flat beyond the last anchor.

    ``loss_paths.increments[k]`` and ``loss_paths.survived[k]`` hold the pooled
    (primary x secondary) one-year increments starting at grid index ``k`` and
    the bank-survival flags, or ``None`` where no window is simulated. Points
    with too few survivors are flagged in ``warnings``; an empty surviving
    sample gives 0.
    """
    times = np.asarray(s.grid.array if hasattr(s, "grid") else s, dtype=float)
    K = times.size
    values = np.zeros(K)
    warnings = []
    last = None
    for k in range(K):
        inc = loss_paths.increments[k] if k < len(loss_paths.increments) else None
        if inc is None:
            if last is not None:
                values[k] = values[last]
            continue
        flags = loss_paths.survived[k]
        n_surv = int(np.count_nonzero(flags))
        if n_surv < min_survivors:
            warnings.append(f"ES at t={times[k]:g}: only {n_surv} surviving samples")
        if n_surv == 0:
            values[k] = 0.0
        else:
            values[k] = conditional_es(ConditionalSample(inc, flags, anchor_time=times[k]), alpha)
        last = k
    return TermStructure(times, values, tuple(warnings))
