"""Sampled signals, experiment logs and bound sets.

Signals carry an explicit availability mask: samples that would reference
pre-record (or post-record) indices after shifting are marked unavailable
instead of being zero-padded, and regression builders drop any row that
touches an unavailable sample.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "SampledSignal",
    "ExperimentLog",
    "BoundSet",
    "shift",
    "slice_log",
    "read_log_csv",
    "write_log_csv",
]


def _frozen_array(values, dtype=float):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SampledSignal:
    """A uniformly sampled scalar signal.

    ``valid`` marks which samples are available; unavailable entries hold NaN
    so accidental use poisons downstream arithmetic.
    """

    values: np.ndarray
    sample_period: float
    start_index: int = 0
    valid: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        values = _frozen_array(self.values)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("signal must be a non-empty 1-D sequence")
        if not self.sample_period > 0:
            raise ValueError("sample_period must be strictly positive")
        valid = self.valid
        if valid is None:
            valid = np.ones(values.size, dtype=bool)
        else:
            valid = _frozen_array(valid, dtype=bool)
            if valid.shape != values.shape:
                raise ValueError("valid mask shape must match values")
        if not valid.all():
            values = values.copy()
            values[~valid] = np.nan
            values.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    def __len__(self):
        return self.values.size

    @property
    def times(self):
        """Sample instants in seconds."""
        idx = self.start_index + np.arange(len(self))
        return idx * self.sample_period

    def available_values(self):
        return self.values[self.valid]

    def with_values(self, values, valid=None) -> "SampledSignal":
        return SampledSignal(values, self.sample_period, self.start_index, valid)


def shift(signal: SampledSignal, lag: int) -> SampledSignal:
    """Delay by ``lag`` samples: out[t] = in[t - lag].

    Positive lag delays, negative lag advances. Samples that would reference
    indices outside the record are marked unavailable.
    """
    n = len(signal)
    values = np.full(n, np.nan)
    valid = np.zeros(n, dtype=bool)
    if lag >= 0:
        if lag < n:
            values[lag:] = signal.values[: n - lag]
            valid[lag:] = signal.valid[: n - lag]
    else:
        adv = -lag
        if adv < n:
            values[: n - adv] = signal.values[adv:]
            valid[: n - adv] = signal.valid[adv:]
    return SampledSignal(values, signal.sample_period, signal.start_index, valid)


@dataclass(frozen=True)
class ExperimentLog:
    """Synchronized (u, y, p) record at a fixed sample period."""

    u: SampledSignal
    y: SampledSignal
    p: SampledSignal

    def __post_init__(self):
        n = len(self.u)
        if len(self.y) != n or len(self.p) != n:
            raise ValueError("u, y, p must have identical length")
        if not (self.u.sample_period == self.y.sample_period == self.p.sample_period):
            raise ValueError("u, y, p must share one sample_period")

    @property
    def n(self):
        return len(self.u)

    @property
    def sample_period(self):
        return self.u.sample_period

    @property
    def start_index(self):
        return self.u.start_index


def slice_log(log: ExperimentLog, start: int, stop: int) -> ExperimentLog:
    """Contiguous sub-log over [start, stop); sample_period preserved."""
    if not (0 <= start < stop <= log.n):
        raise IndexError(f"slice [{start}, {stop}) out of range for log of length {log.n}")

    def cut(sig: SampledSignal) -> SampledSignal:
        return SampledSignal(
            sig.values[start:stop],
            sig.sample_period,
            sig.start_index + start,
            sig.valid[start:stop],
        )

    return ExperimentLog(cut(log.u), cut(log.y), cut(log.p))


@dataclass(frozen=True)
class BoundSet:
    """Input magnitude/rate and output bounds; infinities disable a bound."""

    u_min: float = -np.inf
    u_max: float = np.inf
    du_min: float = -np.inf
    du_max: float = np.inf
    y_min: float = -np.inf
    y_max: float = np.inf

    def __post_init__(self):
        for lo, hi, name in (
            (self.u_min, self.u_max, "u"),
            (self.du_min, self.du_max, "du"),
            (self.y_min, self.y_max, "y"),
        ):
            if np.isfinite(lo) and np.isfinite(hi) and lo > hi:
                raise ValueError(f"{name}_min > {name}_max")

    def is_unbounded(self):
        return all(
            not np.isfinite(v)
            for v in (self.u_min, self.u_max, self.du_min, self.du_max, self.y_min, self.y_max)
        )


# --- CSV log format: header "t,u,y,p", one row per sample, t in seconds. ---
#
# u/y/p cells are written with repr(), which is value-exact on round trip and
# reproduces any decimal of <= 12 significant digits verbatim. The t column is
# display-oriented (%.12g); the reader recovers sample_period from the first
# time step and start_index from t[0].


def _fmt(x: float) -> str:
    if np.isnan(x):
        return "nan"
    return repr(float(x))


def write_log_csv(log: ExperimentLog, path) -> None:
    ts = log.sample_period
    lines = ["t,u,y,p"]
    for i in range(log.n):
        t = (log.start_index + i) * ts
        lines.append(
            f"{t:.12g},{_fmt(log.u.values[i])},{_fmt(log.y.values[i])},{_fmt(log.p.values[i])}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_log_csv(path) -> ExperimentLog:
    text = Path(path).read_text().strip().splitlines()
    if not text or text[0].strip() != "t,u,y,p":
        raise ValueError(f"{path}: expected header 't,u,y,p'")
    rows = [line.split(",") for line in text[1:] if line.strip()]
    if not rows:
        raise ValueError(f"{path}: empty log")
    data = np.array([[float(c) for c in row] for row in rows])
    t = data[:, 0]
    if len(t) > 1:
        ts = float(t[1] - t[0])
        steps = np.diff(t)
        if not np.allclose(steps, ts, rtol=1e-9, atol=1e-12):
            raise ValueError(f"{path}: non-uniform sampling")
    else:
        ts = 1.0
    start = int(round(t[0] / ts)) if len(t) > 1 else 0

    def col(j):
        vals = data[:, j]
        return SampledSignal(vals, ts, start, ~np.isnan(vals))

    return ExperimentLog(col(1), col(2), col(3))
