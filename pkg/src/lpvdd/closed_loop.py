"""Closed-loop simulation: inner-only and hierarchical configurations.

The plant only ever sees the input computed by the real inner-controller
recursion; the governor (when enabled) reshapes the reference fed to it.
Scheduling follows the case study: the measured output for the motor, the
exogenous switch signal for the RC stage.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .inner_synth import ControllerState, InnerControllerModel, controller_step, fit_inner
from .metrics import matching_ms
from .mpc import MpcConfig, MpcController
from .plants import DcMotorPlant, DivergenceError, SwitchedRcPlant
from .realization import AugmentedModel, build_augmented, scheduling_vector
from .refmodel import LpvStateSpace, simulate
from .signals import ExperimentLog, SampledSignal
from .state_estimator import DirectReconstructor, KalmanFilter

__all__ = [
    "LoopResult",
    "run_inner_loop",
    "run_hierarchical",
    "sensitivity_sweep",
    "sweep_parallelism",
]

DIVERGENCE_LIMIT = 1e6


@dataclass
class LoopResult:
    log: ExperimentLog
    g: SampledSignal
    diagnostics: list = field(default_factory=list)


def _plant_step(plant, u, p_now):
    if isinstance(plant, SwitchedRcPlant):
        return plant.step(u, p_now)
    return plant.step(u)


def _run_loop(plant, ctrl: InnerControllerModel, reference: SampledSignal,
              scheduling: Optional[SampledSignal], noise_std: float, seed: int,
              governor: Optional[MpcController], estimator: str,
              estimator_opts: dict, preview: Optional[int]) -> LoopResult:
    """Common per-sample loop for both configurations."""
    plant = plant.copy()
    n = len(reference)
    ts = reference.sample_period
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, noise_std, n) if noise_std > 0 else np.zeros(n)
    rv = reference.values

    st = ctrl.structure
    max_lag = max(st.max_lag, 1)
    u_rec = np.empty(n)
    y_rec = np.empty(n)
    p_rec = np.empty(n)
    g_rec = np.empty(n)
    diags = []

    est = None
    aug = None
    if governor is not None:
        aug = governor.model
        if estimator == "kf":
            est = KalmanFilter(aug, **estimator_opts)
        elif estimator == "direct":
            est = DirectReconstructor(aug, **estimator_opts)
        else:
            raise ValueError(f"unknown estimator {estimator!r}")
        horizon = governor.config.Np
        prev = horizon if preview is None else min(preview, horizon)

    ctrl_state = None
    u_prev = 0.0
    g_prev = 0.0
    try:
        for t in range(n):
            y_clean = plant.output()
            if not np.isfinite(y_clean) or abs(y_clean) > DIVERGENCE_LIMIT:
                raise DivergenceError("closed-loop output diverged", t,
                                      partial=_partial_log(u_rec, y_rec, p_rec, ts, t))
            y_meas = y_clean + noise[t]
            p_now = y_meas if scheduling is None else float(scheduling.values[t])
            if ctrl_state is None:
                ctrl_state = ControllerState(st, p0=p_now)

            if governor is None:
                g_t = float(rv[t])
            else:
                pi_now = np.array([p_now if l == 0 else ctrl_state.p_hist[l - 1]
                                   for l in aug.scheduling_lags])
                if isinstance(est, DirectReconstructor):
                    est.observe(y_meas, pi_now)
                elif t > 0:
                    est.advance(g_prev, (y_meas, u_prev), pi_now)
                xi = est.estimate()
                r_future = rv[min(t + 1, n - 1): t + 1 + prev]
                if r_future.size == 0:
                    r_future = rv[-1:]
                p_future = None
                if governor.config.mode == "ltv":
                    if scheduling is None:
                        raise ValueError("LTV mode needs an exogenous schedule")
                    p_future = scheduling.values[min(t + 1, n - 1): t + 1 + horizon]
                g_t, diag = governor.step(xi, r_future, p_now,
                                          p_past=list(reversed(ctrl_state.p_hist)),
                                          p_future=p_future, u_prev=u_prev,
                                          y_now=y_meas)
                diag["t"] = t * ts
                diags.append(diag)

            e_t = g_t - y_meas
            u_t = controller_step(ctrl, ctrl_state, g_t, y_meas, p_now)
            if governor is not None and isinstance(est, DirectReconstructor):
                est.advance(g_t, u_t, e_t)
            _plant_step(plant, u_t, p_now)

            u_rec[t] = u_t
            y_rec[t] = y_meas
            p_rec[t] = p_now
            g_rec[t] = g_t
            u_prev = u_t
            g_prev = g_t
    except DivergenceError as err:
        if err.partial is None:
            err.partial = _partial_log(u_rec, y_rec, p_rec, ts, err.first_bad_index)
        raise

    log = ExperimentLog(SampledSignal(u_rec, ts), SampledSignal(y_rec, ts),
                        SampledSignal(p_rec, ts))
    return LoopResult(log, SampledSignal(g_rec, ts), diags)


def _partial_log(u, y, p, ts, t):
    if t == 0:
        return None
    return ExperimentLog(SampledSignal(u[:t], ts), SampledSignal(y[:t], ts),
                         SampledSignal(p[:t], ts))


def run_inner_loop(plant, ctrl: InnerControllerModel, g: SampledSignal,
                   scheduling: Optional[SampledSignal] = None,
                   noise_std: float = 0.0, seed: int = 0) -> LoopResult:
    """Inner loop only: the reference g feeds the controller directly."""
    return _run_loop(plant, ctrl, g, scheduling, noise_std, seed,
                     governor=None, estimator="direct", estimator_opts={},
                     preview=None)


def run_hierarchical(plant, ctrl: InnerControllerModel, aug: AugmentedModel,
                     mpc_config: MpcConfig, r: SampledSignal,
                     scheduling: Optional[SampledSignal] = None,
                     noise_std: float = 0.0, seed: int = 0,
                     estimator: str = "direct", estimator_opts: Optional[dict] = None,
                     preview: Optional[int] = None,
                     debug_dump_prefix=None) -> LoopResult:
    """Full architecture: governor shapes g, inner controller drives the plant."""
    governor = MpcController(aug, mpc_config, debug_dump_prefix=debug_dump_prefix)
    return _run_loop(plant, ctrl, r, scheduling, noise_std, seed,
                     governor=governor, estimator=estimator,
                     estimator_opts=estimator_opts or {}, preview=preview)


def sweep_parallelism() -> int:
    cap = os.environ.get("LPVDD_THREADS")
    if cap:
        return max(1, int(cap))
    return min(4, os.cpu_count() or 1)


def sensitivity_sweep(plant, structure, poles, train_log, instrument_log,
                      reference: SampledSignal, noise_std: float = 0.0,
                      seed: int = 0, gamma: Optional[float] = None,
                      method: Optional[str] = None):
    """Refit the inner controller for a list of reference-model poles and
    score the inner loop against each model's desired response.

    Returns a list of dicts: pole, cutoff proxy, ms (None when the loop
    diverged), unstable flag. Entries run concurrently (LPVDD_THREADS caps).
    """

    def entry(pole: float):
        M = LpvStateSpace.first_order(pole)
        ctrl = fit_inner(train_log, instrument_log, structure, M,
                         gamma=gamma, method=method)
        try:
            result = run_inner_loop(plant, ctrl, reference,
                                    noise_std=noise_std, seed=seed)
        except DivergenceError:
            return {"pole": pole, "ms": None, "unstable": True}
        y_d, _ = simulate(M, result.g, result.log.p)
        return {"pole": pole, "ms": matching_ms(result.log.y, y_d),
                "unstable": False}

    workers = min(sweep_parallelism(), max(len(poles), 1))
    if workers == 1:
        return [entry(p) for p in poles]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(entry, poles))
