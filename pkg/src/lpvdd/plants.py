"""Simulated plants and excitation generators.

These stand in for the unknown system the controller is designed against:
a voltage-driven DC motor with an off-axis mass (quasi-LPV, scheduling on the
measured shaft angle) and a first-order RC stage whose pole/gain switch with
an exogenous Boolean load signal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _accel
from .signals import ExperimentLog, SampledSignal

__all__ = [
    "DivergenceError",
    "DcMotorPlant",
    "SwitchedRcPlant",
    "ExcitationSpec",
    "generate_excitation",
    "simulate_dc_motor",
    "simulate_switched_rc",
    "repeat_experiment",
]

RK4_SUBSTEPS = 100  # internal step Ts/100; the electrical pole R/L ~ 1.1e4 rad/s
                    # needs h < 2.5e-4 s for RK4 stability at Ts = 10 ms


class DivergenceError(RuntimeError):
    """Simulation produced a non-finite or runaway state."""

    def __init__(self, message, first_bad_index, partial=None):
        super().__init__(message)
        self.first_bad_index = first_bad_index
        self.partial = partial


@dataclass
class DcMotorPlant:
    """Continuous-time DC motor with an added mass on the disc.

    State is (theta [rad], omega [rad/s], current [A]); input is armature
    voltage, output is theta. Defaults are the servo bench values.
    """

    R: float = 9.5
    L: float = 0.84e-3
    K: float = 53.6e-3
    J: float = 2.2e-4
    b: float = 6.6e-5
    m: float = 0.07
    l: float = 0.042
    g_accel: float = 9.81
    sample_period: float = 0.01
    state: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("R", "L", "K", "J", "b", "m", "l", "g_accel", "sample_period"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        self.state = tuple(float(s) for s in self.state)
        if len(self.state) != 3:
            raise ValueError("state must be (theta, omega, current)")

    def _params(self):
        return np.array([self.R, self.L, self.K, self.J, self.b, self.m, self.l, self.g_accel])

    def copy(self) -> "DcMotorPlant":
        return replace(self)

    def output(self) -> float:
        return self.state[0]

    def step(self, u: float) -> float:
        """Apply voltage u for one sample period; returns the new theta."""
        traj = _accel.dc_motor_rk4(
            self._params(), np.array(self.state), np.array([float(u)]),
            self.sample_period, RK4_SUBSTEPS,
        )
        new = traj[-1]
        if not np.all(np.isfinite(new)):
            raise DivergenceError("DC motor state diverged", 0)
        self.state = (new[0], new[1], new[2])
        return self.state[0]


@dataclass
class SwitchedRcPlant:
    """Discrete first-order stage with load-switched pole and gain."""

    a_on: float = 0.80
    b_on: float = 0.20
    a_off: float = 0.95
    b_off: float = 0.05
    sample_period: float = 0.15
    state: float = 0.0

    def __post_init__(self):
        for name in ("a_on", "a_off"):
            a = getattr(self, name)
            if not 0.0 < a < 1.0:
                raise ValueError(f"{name} must lie strictly inside (0, 1)")

    def copy(self) -> "SwitchedRcPlant":
        return replace(self)

    def output(self) -> float:
        return self.state

    def step(self, u: float, s: float) -> float:
        a, b = (self.a_on, self.b_on) if s > 0.5 else (self.a_off, self.b_off)
        self.state = a * self.state + b * float(u)
        return self.state


@dataclass(frozen=True)
class ExcitationSpec:
    """Open-loop excitation recipe; deterministic given the seed."""

    kind: str = "filtered-gaussian"  # or "piecewise-constant"
    std: float = 1.0
    filter_cutoff_hz: float = 1.6
    hold_length: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("filtered-gaussian", "piecewise-constant"):
            raise ValueError(f"unknown excitation kind {self.kind!r}")
        if self.std < 0:
            raise ValueError("std must be >= 0")
        if self.kind == "filtered-gaussian" and not self.filter_cutoff_hz > 0:
            raise ValueError("filter_cutoff_hz must be > 0")


def generate_excitation(spec: ExcitationSpec, n: int, period: float) -> SampledSignal:
    """White Gaussian noise, either one-pole low-passed or sample-held."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "filtered-gaussian":
        white = rng.normal(0.0, spec.std, n)
        pole = math.exp(-2.0 * math.pi * spec.filter_cutoff_hz * period)
        values = _accel.one_pole_lowpass(white, pole)
    else:
        n_levels = -(-n // max(spec.hold_length, 1))
        levels = rng.normal(0.0, spec.std, n_levels)
        values = np.repeat(levels, max(spec.hold_length, 1))[:n]
    return SampledSignal(values, period)


def _noise_std_for_snr(clean: np.ndarray, snr_db: float) -> float:
    if math.isinf(snr_db):
        return 0.0
    var = float(np.var(clean))
    return math.sqrt(var / (10.0 ** (snr_db / 10.0)))


def simulate_dc_motor(plant: DcMotorPlant, u: SampledSignal, snr_db: float,
                      seed: int) -> ExperimentLog:
    """Open-loop motor run; output is theta with Gaussian measurement noise.

    The log is aligned so y[k] is the state *before* u[k] acts (y[0] is the
    initial angle), which keeps the sampled plant strictly causal. The
    scheduling channel equals the noisy output. The plant instance is not
    mutated.
    """
    uv = np.asarray(u.values, dtype=float)
    traj = _accel.dc_motor_rk4(plant._params(), np.array(plant.state), uv[:-1],
                               u.sample_period, RK4_SUBSTEPS)
    if traj.shape[0] < uv.size - 1 or not np.all(np.isfinite(traj)):
        raise DivergenceError("DC motor simulation diverged",
                              first_bad_index=traj.shape[0])
    theta = np.concatenate(([plant.state[0]], traj[:, 0]))
    noise_std = _noise_std_for_snr(theta, snr_db)
    rng = np.random.default_rng(seed)
    y = theta + (rng.normal(0.0, noise_std, theta.size) if noise_std > 0 else 0.0)
    ys = SampledSignal(y, u.sample_period, u.start_index)
    return ExperimentLog(u=u, y=ys, p=ys)


def simulate_switched_rc(plant: SwitchedRcPlant, u: SampledSignal, s: SampledSignal,
                         noise_std: float, seed: int) -> ExperimentLog:
    """Switched-RC run; p channel is the switch signal itself."""
    if len(s) != len(u):
        raise ValueError("u and s must have equal length")
    sv = np.asarray(s.values)
    if not np.all((sv == 0.0) | (sv == 1.0)):
        raise ValueError("switch signal must be Boolean-valued (0/1)")
    clean = _accel.switched_rc_recursion(plant.a_on, plant.b_on, plant.a_off,
                                         plant.b_off, plant.state,
                                         np.asarray(u.values, dtype=float),
                                         sv.astype(np.float64))
    rng = np.random.default_rng(seed)
    y = clean + (rng.normal(0.0, noise_std, clean.size) if noise_std > 0 else 0.0)
    return ExperimentLog(u=u,
                         y=SampledSignal(y, u.sample_period, u.start_index),
                         p=s)


def repeat_experiment(plant: DcMotorPlant, u: SampledSignal, snr_db: float,
                      seed2: int) -> ExperimentLog:
    """Re-run the same deterministic trajectory with fresh measurement noise.

    Produces the instrument log: identical clean response, independent noise
    realization.
    """
    return simulate_dc_motor(plant, u, snr_db, seed2)
