"""Counting-process estimators for one node: risk table, Nelson-Aalen, Kaplan-Meier, log-rank.

Tie convention: an individual censored at an event time is still at risk at
that time (censoring happens after events).
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
import logging

import numpy as np

from . import InadmissibleSplit

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class RiskTable:
    """Distinct event times with event counts d and at-risk counts Y.

    Counts are floats so bootstrap multiplicities can be used as weights.
    """

    event_times: np.ndarray
    events: np.ndarray
    at_risk: np.ndarray

    @property
    def total_events(self) -> float:
        return float(self.events.sum())

    def hazard_increments(self) -> np.ndarray:
        """d / Y at each event time (the Nelson-Aalen jumps)."""
        return self.events / self.at_risk

    def to_dict(self) -> dict:
        return {
            "times": self.event_times.tolist(),
            "events": self.events.tolist(),
            "at_risk": self.at_risk.tolist(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> RiskTable:
        return cls(
            np.asarray(raw["times"], dtype=float),
            np.asarray(raw["events"], dtype=float),
            np.asarray(raw["at_risk"], dtype=float),
        )


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous piecewise-constant function of time.

    Evaluates to the value at the last jump time <= t, or ``initial_value``
    before the first jump.
    """

    times: np.ndarray
    values: np.ndarray
    initial_value: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        padded = np.concatenate(([self.initial_value], self.values))
        return padded[idx + 1]

    def left_limit(self, t):
        """Value just before ``t``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="left") - 1
        padded = np.concatenate(([self.initial_value], self.values))
        return padded[idx + 1]

    def scaled(self, factor: float) -> StepFunction:
        return StepFunction(self.times, self.values * factor, self.initial_value * factor)

    def equals(self, other: StepFunction) -> bool:
        return (
            self.initial_value == other.initial_value
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
        )

    def to_dict(self) -> dict:
        return {"times": self.times.tolist(), "values": self.values.tolist(), "initial": self.initial_value}

    @classmethod
    def constant(cls, value: float) -> StepFunction:
        return cls(np.empty(0), np.empty(0), float(value))

    @classmethod
    def average(cls, functions: Sequence[StepFunction], weights: Sequence[float] | None = None) -> StepFunction:
        """Pointwise (weighted) mean, exact on the union of all jump times.

        With no weights this is the plain mean 1/B sum f_b, summed first and
        divided once, so B equal functions average to that function itself.
        With weights it is sum w_b f_b (weights are used as given, not
        normalised).
        """
        if not functions:
            raise ValueError("cannot average an empty set of step functions")
        first = functions[0]
        if weights is None and all(f is first or f.equals(first) for f in functions[1:]):
            return first
        times = np.unique(np.concatenate([f.times for f in functions]))
        stacked = np.vstack([f(times) for f in functions])
        initials = np.array([f.initial_value for f in functions], dtype=float)
        if weights is None:
            return cls(times, stacked.sum(axis=0) / len(functions), float(initials.sum() / len(functions)))
        w = np.asarray(weights, dtype=float)
        return cls(times, w @ stacked, float(w @ initials))


def _as_arrays(times, statuses, weights=None):
    t = np.asarray(times, dtype=float)
    s = np.asarray(statuses, dtype=float)
    if t.shape != s.shape or t.ndim != 1:
        raise ValueError("times and statuses must be one-dimensional and of equal length")
    w = np.ones_like(t) if weights is None else np.asarray(weights, dtype=float)
    return t, s, w


def build_risk_table(times, statuses, weights=None) -> RiskTable:
    """Tabulate distinct event times, events d and at-risk counts Y.

    ``weights`` are per-individual multiplicities (defaults to 1).
    """
    t, s, w = _as_arrays(times, statuses, weights)
    if t.size == 0:
        raise ValueError("cannot build a risk table from no observations")
    event = (s == 1) & (w > 0)
    event_times = np.unique(t[event])
    if event_times.size == 0:
        return RiskTable(event_times, np.empty(0), np.empty(0))
    # slot k collects weight of individuals whose time falls in [t_k, t_{k+1})
    slot = np.searchsorted(event_times, t, side="right")
    removed = np.bincount(slot, weights=w, minlength=event_times.size + 1)
    at_risk = np.cumsum(removed[::-1])[::-1][1:]
    events = np.bincount(
        np.searchsorted(event_times, t[event]), weights=w[event], minlength=event_times.size
    )
    return RiskTable(event_times, events, at_risk)


def nelson_aalen(rt: RiskTable) -> StepFunction:
    """Cumulative hazard H(t) = sum over t_l <= t of d_l / Y_l."""
    # J/Y = 0 when Y = 0; a risk table never lists such a time.
    assert np.all(rt.at_risk > 0), "risk table lists an event time with nobody at risk"
    return StepFunction(rt.event_times, np.cumsum(rt.hazard_increments()), 0.0)


def kaplan_meier(rt: RiskTable) -> StepFunction:
    """Product-limit survival S(t) = prod over t_l <= t of (1 - d_l / Y_l)."""
    return StepFunction(rt.event_times, np.cumprod(1.0 - rt.hazard_increments()), 1.0)


def logrank_scores(d_left: np.ndarray, y_left: np.ndarray, d: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Standardised two-sample log-rank statistics, vectorised over splits.

    ``d_left``/``y_left`` have shape (..., K) over the pooled event times;
    ``d``/``y`` are the pooled counts of shape (K,). Times with Y <= 1 add no
    variance; a split with zero total variance scores 0.
    """
    frac = y_left / y
    observed_minus_expected = np.sum(d_left - frac * d, axis=-1)
    denom = np.where(y > 1, y - 1, 1.0)
    var_terms = np.where(y > 1, d * frac * (1.0 - frac) * (y - d) / denom, 0.0)
    variance = np.sum(var_terms, axis=-1)
    safe = np.where(variance > 0, variance, 1.0)
    return np.where(variance > 0, np.abs(observed_minus_expected) / np.sqrt(safe), 0.0)


def logrank_statistic(
    left_times, left_statuses, right_times, right_statuses, left_weights=None, right_weights=None
) -> float:
    """|sum(O - E)| / sqrt(V) comparing the left daughter against the pool.

    Raises ``InadmissibleSplit`` when either side is empty.
    """
    lt, ls, lw = _as_arrays(left_times, left_statuses, left_weights)
    rt_, rs, rw = _as_arrays(right_times, right_statuses, right_weights)
    if lw.sum() <= 0 or rw.sum() <= 0:
        raise InadmissibleSplit("both daughters must contain at least one case")
    pooled = build_risk_table(np.concatenate([lt, rt_]), np.concatenate([ls, rs]), np.concatenate([lw, rw]))
    if pooled.event_times.size == 0:
        return 0.0
    grid = pooled.event_times
    y_left = np.array([lw[lt >= g].sum() for g in grid])
    d_left = np.array([lw[(lt == g) & (ls == 1)].sum() for g in grid])
    return float(logrank_scores(d_left, y_left, pooled.events, pooled.at_risk))
