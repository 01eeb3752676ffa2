"""Receding-horizon reference governor over the augmented model.

Each step condenses the Np-step prediction of (y, u) into a dense QP in the
blocked reference moves plus one shared soft-constraint slack:

    z = [g(t+1|t) .. g(t+Nu|t), eps],   applied move g(t) = z[0].

The objective penalizes output tracking, input-reference deviation, input
increments, governor deviation from the raw reference, and the slack. Output,
input-magnitude and input-rate constraints over the horizon are softened by
the slack through per-family gains. The increment and magnitude rows include
the imminent input (prediction step 0), whose rate term is taken against the
previously applied input, so the realized move is constrained directly.

Scheduling over the horizon: LTV mode consumes a known future schedule;
LPV mode freezes the future at the current value (measured past values are
used for lagged entries either way, so the two coincide for constant p).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .qp import QpProblem, QpSolution, solve
from .realization import AugmentedModel, scheduling_vector
from .signals import BoundSet

__all__ = ["MpcConfig", "PredictionStack", "MpcError", "build_step_qp",
           "MpcController", "mpc_step", "dump_qp_csv"]


class MpcError(RuntimeError):
    def __init__(self, message, problem=None, solution=None):
        super().__init__(message)
        self.problem = problem
        self.solution = solution


@dataclass(frozen=True)
class MpcConfig:
    Np: int = 10
    Nu: int = 10
    Q_y: float = 1.0
    Q_u: float = 0.0
    Q_du: float = 0.0
    Q_g: float = 1.0
    Q_eps: float = 1e5
    V_y: float = 1.0
    V_u: float = 1.0
    V_du: float = 1.0
    bounds: BoundSet = field(default_factory=BoundSet)
    mode: str = "lpv"  # "lpv": future p frozen at p(t); "ltv": future p known
    u_ref: float = 0.0
    qp_tol: float = 1e-8
    qp_max_iter: int = 200

    def __post_init__(self):
        if not (1 <= self.Nu <= self.Np):
            raise ValueError("need 1 <= Nu <= Np")
        for name in ("Q_y", "Q_u", "Q_du", "Q_g"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.Q_eps > 0:
            raise ValueError("Q_eps must be > 0")
        for name in ("V_y", "V_u", "V_du"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.mode not in ("lpv", "ltv"):
            raise ValueError("mode must be 'lpv' or 'ltv'")


@dataclass(frozen=True)
class PredictionStack:
    """Affine maps from the move vector to stacked predictions.

    y(t+k|t), k=1..Np:      Y = Gy m + hy
    u(t+k|t), k=0..Np:      U = Gu m + hu   (row 0 is the imminent input)
    """

    Gy: np.ndarray
    hy: np.ndarray
    Gu: np.ndarray
    hu: np.ndarray


def _schedule_vectors(model: AugmentedModel, config: MpcConfig, p_now: float,
                      p_past=None, p_future=None):
    """Lag vectors pi_k for prediction steps k = 0..Np."""
    max_lag = max(model.scheduling_lags)
    if p_past is None or len(p_past) == 0:
        past = np.full(max(max_lag, 1), p_now)
    else:
        past = np.asarray(p_past, dtype=float)[-max_lag:] if max_lag else np.zeros(0)
        if past.size < max_lag:
            past = np.concatenate([np.full(max_lag - past.size, past[0]), past])
    if config.mode == "ltv":
        if p_future is None:
            raise ValueError("LTV mode needs the future scheduling sequence")
        fut = np.asarray(p_future, dtype=float)
        if fut.size < config.Np:
            fut = np.concatenate([fut, np.full(config.Np - fut.size, fut[-1] if fut.size else p_now)])
    else:
        fut = np.full(config.Np, p_now)
    timeline = np.concatenate([past, [p_now], fut[: config.Np]])
    t0 = past.size
    return [scheduling_vector(timeline, t0 + k, model.scheduling_lags)
            for k in range(config.Np + 1)]


def build_prediction(model: AugmentedModel, config: MpcConfig, xi, pis) -> PredictionStack:
    Np, Nu = config.Np, config.Nu
    n = model.n_state
    mats = [model.evaluate_at(pi) for pi in pis]
    S = np.zeros((n, Nu))
    fvec = np.asarray(xi, dtype=float).copy()
    Gy = np.zeros((Np, Nu))
    hy = np.zeros(Np)
    Gu = np.zeros((Np + 1, Nu))
    hu = np.zeros(Np + 1)
    # imminent input from the current state and the first move
    _, _, C0, D0 = mats[0]
    Gu[0, 0] = D0[1, 0]
    hu[0] = float(C0[1] @ fvec)
    for k in range(Np):
        A, B, _, _ = mats[k]
        col = min(k, Nu - 1)
        S = A @ S
        S[:, col] += B[:, 0]
        fvec = A @ fvec
        _, _, C, D = mats[k + 1]
        Gy[k] = C[0] @ S
        hy[k] = float(C[0] @ fvec)
        Gu[k + 1] = C[1] @ S
        Gu[k + 1, min(k + 1, Nu - 1)] += D[1, 0]
        hu[k + 1] = float(C[1] @ fvec)
    return PredictionStack(Gy, hy, Gu, hu)


def build_step_qp(model: AugmentedModel, config: MpcConfig, xi, r_future,
                  p_now: float, p_past=None, p_future=None, u_prev: float = 0.0,
                  y_now: Optional[float] = None):
    """Assemble the step QP; returns (QpProblem, PredictionStack).

    ``r_future`` holds the reference preview r(t..t+Np-1) starting at the
    current sample (short previews are held at the last value); the applied
    move is compared against r(t), so a governor with a dominant Q_g and no
    active constraints passes the reference through unchanged. When ``y_now``
    is given, the imminent-input row is corrected to use the measured output
    instead of the estimated model state, which makes it exactly the input
    the inner controller is about to compute whenever the shift-register
    states are exact.
    """
    Np, Nu = config.Np, config.Nu
    r_future = np.asarray(r_future, dtype=float).ravel()
    if r_future.size == 0:
        raise ValueError("empty reference preview")
    if r_future.size < Np:
        r_future = np.concatenate([r_future, np.full(Np - r_future.size, r_future[-1])])
    r_future = r_future[:Np]
    r_outputs = np.append(r_future[1:], r_future[-1])  # targets for y(t+k|t), k=1..Np

    pis = _schedule_vectors(model, config, p_now, p_past, p_future)
    pred = build_prediction(model, config, xi, pis)
    if y_now is not None:
        C_M = model.reference_model.evaluate(pis[0][0])[2]
        x_m = np.asarray(xi, dtype=float)[: model.layout["n_xm"]]
        b0 = model.evaluate_at(pis[0])[3][1, 0]
        pred = replace(pred, hu=pred.hu.copy())
        pred.hu[0] += b0 * (float(C_M @ x_m) - y_now)

    nz = Nu + 1
    eps_col = Nu
    H = np.zeros((nz, nz))
    f = np.zeros(nz)

    def add_quadratic(G, h, weight, target):
        # weight * || G m + h - target ||^2 on z = [m, eps]
        if weight == 0.0:
            return
        H[:Nu, :Nu] += 2.0 * weight * (G.T @ G)
        f[:Nu] += 2.0 * weight * (G.T @ (h - target))

    add_quadratic(pred.Gy, pred.hy, config.Q_y, r_outputs)
    uref = np.full(Np, config.u_ref)
    add_quadratic(pred.Gu[1:], pred.hu[1:], config.Q_u, uref)
    # input increments: rows k=0..Np, the first against the applied input
    Gd = np.vstack([pred.Gu[0], np.diff(pred.Gu, axis=0)])
    hd = np.concatenate([[pred.hu[0] - u_prev], np.diff(pred.hu)])
    add_quadratic(Gd, hd, config.Q_du, np.zeros(Np + 1))
    add_quadratic(np.eye(Nu), np.zeros(Nu), config.Q_g, r_future[:Nu])
    H[eps_col, eps_col] += 2.0 * config.Q_eps

    rows = []
    rhs = []

    def add_bounds(G, h, lo, hi, gain):
        if np.isfinite(hi):
            block = np.hstack([G, np.full((G.shape[0], 1), -gain)])
            rows.append(block)
            rhs.append(hi - h)
        if np.isfinite(lo):
            block = np.hstack([-G, np.full((G.shape[0], 1), -gain)])
            rows.append(block)
            rhs.append(h - lo)

    bset = config.bounds
    add_bounds(pred.Gy, pred.hy, bset.y_min, bset.y_max, config.V_y)
    add_bounds(pred.Gu, pred.hu, bset.u_min, bset.u_max, config.V_u)
    add_bounds(Gd, hd, bset.du_min, bset.du_max, config.V_du)
    # eps >= 0
    eps_row = np.zeros((1, nz))
    eps_row[0, eps_col] = -1.0
    rows.append(eps_row)
    rhs.append(np.zeros(1))

    problem = QpProblem(H, f, np.vstack(rows), np.concatenate(rhs))
    return problem, pred


class MpcController:
    """Stateful per-loop governor: warm start plus per-step diagnostics."""

    def __init__(self, model: AugmentedModel, config: MpcConfig,
                 debug_dump_prefix=None):
        self.model = model
        self.config = config
        self._warm = []
        self.debug_dump_prefix = debug_dump_prefix
        self._step = 0

    def step(self, xi, r_future, p_now, p_past=None, p_future=None,
             u_prev=0.0, y_now=None):
        problem, pred = build_step_qp(self.model, self.config, xi, r_future,
                                      p_now, p_past, p_future, u_prev, y_now)
        sol = solve(problem, tol=self.config.qp_tol,
                    max_iter=self.config.qp_max_iter, warm_start=self._warm)
        if self.debug_dump_prefix is not None:
            dump_qp_csv(problem, f"{self.debug_dump_prefix}_{self._step:06d}.csv")
        self._step += 1
        if sol.status != "optimal":
            if self.debug_dump_prefix is None:
                dump_qp_csv(problem, f"lpvdd_qp_failure_{self._step:06d}.csv")
            raise MpcError(f"QP returned status {sol.status!r} "
                           f"(iterations {sol.iterations})", problem, sol)
        self._warm = sol.active_set
        g = float(sol.z[0])
        eps = float(sol.z[-1])
        diag = {
            "g": g,
            "eps": eps,
            "qp_iters": sol.iterations,
            "qp_kkt": sol.kkt_residual,
            "active_set_size": len(sol.active_set),
            "objective": sol.objective,
        }
        return g, diag


def mpc_step(controller: MpcController, xi, r_future, p_now, p_past=None,
             p_future=None, u_prev=0.0, y_now=None):
    """Solve one receding-horizon step and return (g(t), diagnostics)."""
    return controller.step(xi, r_future, p_now, p_past, p_future, u_prev, y_now)


def dump_qp_csv(problem: QpProblem, path) -> None:
    """Flat CSV dump of (H, f, A_in, b_in) for external cross-checking."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["section", "i", "j", "value"])
        for i, row in enumerate(problem.H):
            for j, v in enumerate(row):
                w.writerow(["H", i, j, repr(v)])
        for i, v in enumerate(problem.f):
            w.writerow(["f", i, "", repr(v)])
        if problem.A_in is not None:
            for i, row in enumerate(problem.A_in):
                for j, v in enumerate(row):
                    w.writerow(["A_in", i, j, repr(v)])
            for i, v in enumerate(problem.b_in):
                w.writerow(["b_in", i, "", repr(v)])
