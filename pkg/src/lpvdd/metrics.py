"""Closed-loop performance measures.

Threshold crossings are linearly interpolated between samples so analytic
fixtures evaluate exactly; settling uses last-exit semantics (enter and
remain in the band).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .signals import SampledSignal

__all__ = ["StepMetrics", "step_metrics", "matching_ms", "violation_stats"]


@dataclass(frozen=True)
class StepMetrics:
    rise_time_10_90: Optional[float]
    settling_time_2pct: Optional[float]
    overshoot_pct: Optional[float]
    final_value: float

    @property
    def defined(self):
        return self.rise_time_10_90 is not None


def _cross_time(s: np.ndarray, level: float, ts: float) -> Optional[float]:
    """First upward crossing of ``level``, linearly interpolated."""
    above = s >= level
    if above[0]:
        return 0.0
    idx = np.flatnonzero(above)
    if idx.size == 0:
        return None
    k = idx[0]
    frac = (level - s[k - 1]) / (s[k] - s[k - 1])
    return (k - 1 + frac) * ts


def step_metrics(y: SampledSignal, step_start: int, initial: float,
                 final_target: float) -> StepMetrics:
    """Rise/settling/overshoot of the response from ``step_start`` onward."""
    if final_target == initial:
        raise ValueError("final_target must differ from initial")
    seg = y.values[step_start:]
    ts = y.sample_period
    s = (seg - initial) / (final_target - initial)  # normalized response

    t10 = _cross_time(s, 0.1, ts)
    t90 = _cross_time(s, 0.9, ts)
    rise = (t90 - t10) if (t10 is not None and t90 is not None) else None

    err = np.abs(s - 1.0)
    outside = np.flatnonzero(err > 0.02)
    if outside.size == 0:
        settling: Optional[float] = 0.0
    elif outside[-1] == s.size - 1:
        settling = None  # never settles inside the record
    else:
        k = outside[-1]
        frac = (err[k] - 0.02) / (err[k] - err[k + 1])
        settling = (k + frac) * ts

    overshoot = float(max(s.max() - 1.0, 0.0) * 100.0) if rise is not None else None
    return StepMetrics(rise, settling, overshoot, float(seg[-1]))


def matching_ms(y: SampledSignal, y_d: SampledSignal) -> float:
    """Mean square difference between achieved and desired output."""
    if len(y) != len(y_d):
        raise ValueError("signals must have equal length")
    return float(np.mean((y.values - y_d.values) ** 2))


def violation_stats(signal: SampledSignal, bound_low: float, bound_high: float):
    """(max positive excursion beyond the bounds, violating sample count)."""
    v = signal.values[signal.valid]
    over = np.maximum(v - bound_high, 0.0)
    under = np.maximum(bound_low - v, 0.0)
    worst = float(max(over.max(initial=0.0), under.max(initial=0.0)))
    count = int(np.count_nonzero((over > 0) | (under > 0)))
    return worst, count
