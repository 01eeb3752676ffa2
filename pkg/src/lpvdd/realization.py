"""Augmented governor model: reference model plus inner controller.

The outer optimizer predicts both the inner-loop output y (taken to follow
the reference model) and the plant input u (what the identified controller
would do given e = g - y) from the governed reference g. This module builds
the non-minimal shift-register state-space realization of that single-input
two-output map:

    state  xi = [x_M | u(t-1..t-n_a) | e(t-1..t-n_b) | e_int(t-1)?]
    output [y; u],  y row has no feedthrough, u row feeds through b_0(Pi) g.

Scheduling enters as a lag vector: entry k of the scheduling argument is
p(t - lags[k]), with lag 0 always first (the reference model reads it, the
controller coefficients read their declared lags).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .inner_synth import InnerControllerModel, _controller_dict, controller_from_dict
from .refmodel import LpvStateSpace
from .signals import SampledSignal

__all__ = [
    "AugmentedModel",
    "build_augmented",
    "evaluate_at",
    "simulate_augmented",
    "scheduling_vector",
    "save_augmented",
    "load_augmented",
]


def scheduling_vector(p_values, t, lags, fill=None):
    """[p(t - l) for l in lags] against a recorded trajectory; indices before
    the record clamp to p_values[0] (or ``fill``)."""
    first = p_values[0] if fill is None else fill
    return np.array([p_values[t - l] if t - l >= 0 else first for l in lags])


@dataclass(frozen=True)
class AugmentedModel:
    model: LpvStateSpace  # n_u=1, n_y=2, callable-backed
    reference_model: LpvStateSpace
    controller: InnerControllerModel
    scheduling_lags: tuple
    layout: dict

    @property
    def n_state(self):
        return self.model.n_x

    def evaluate_at(self, p_vector):
        """Concrete (A, B, C, D) at one scheduling lag vector."""
        p_vector = np.asarray(p_vector, dtype=float).ravel()
        if p_vector.size != len(self.scheduling_lags):
            raise ValueError(
                f"scheduling vector has {p_vector.size} entries, "
                f"expected {len(self.scheduling_lags)} (lags {self.scheduling_lags})")
        return self.model.evaluate(p_vector)

    def initial_state(self):
        return np.zeros(self.n_state)

    def state_from_histories(self, x_m, u_hist, e_hist, e_int_prev=0.0):
        """Assemble xi from measured histories (newest first)."""
        lay = self.layout
        xi = np.zeros(self.n_state)
        xi[: lay["n_xm"]] = np.asarray(x_m, dtype=float).ravel()
        for i, sl in enumerate(range(*lay["u_hist"])):
            xi[sl] = u_hist[i]
        for j, sl in enumerate(range(*lay["e_hist"])):
            xi[sl] = e_hist[j]
        if lay["e_int"] is not None:
            xi[lay["e_int"]] = e_int_prev
        return xi


def build_augmented(M: LpvStateSpace, ctrl: InnerControllerModel) -> AugmentedModel:
    """Shift-register realization of the governed inner loop."""
    if not M.is_siso:
        raise ValueError("reference model must be SISO")
    # the y row of the augmented map must have no feedthrough
    probe = M.p_range if M.p_range else (0.0, 0.0)
    for p in np.linspace(probe[0], probe[1], 9):
        if abs(M.evaluate(p)[3][0, 0]) > 0:
            raise ValueError("reference model with direct feedthrough is unsupported")

    st = ctrl.structure
    n_xm, n_a, n_b = M.n_x, st.n_a, st.n_b
    integ = st.fixed_part == "integrator"
    n = n_xm + n_a + n_b + (1 if integ else 0)
    lags = (0,) + tuple(l for l in st.scheduling_lags if l != 0)
    layout = {
        "n_xm": n_xm,
        "u_hist": (n_xm, n_xm + n_a),
        "e_hist": (n_xm + n_a, n_xm + n_a + n_b),
        "e_int": n - 1 if integ else None,
        "n_state": n,
    }
    ctrl_cols = [lags.index(l) for l in st.scheduling_lags]

    def evaluate(p_vector):
        p_vector = np.asarray(p_vector, dtype=float).ravel()
        A_M, B_M, C_M, _ = M.evaluate(p_vector[0])
        a_coef, b_coef = ctrl.coefficients(p_vector[ctrl_cols])
        a_hat = -a_coef  # realized recursion u(t) = sum a_hat_i u(t-i) + ...
        c_m = -np.array([b_coef[m + 1:].sum() for m in range(1, n_b)]) if n_b > 1 else np.zeros(0)

        u_slice = slice(*layout["u_hist"])
        e_slice = slice(*layout["e_hist"])
        cm_row = C_M[0]

        # u(t) as a function of (xi, g)
        u_row = np.zeros(n)
        u_row[:n_xm] = -b_coef[0] * cm_row
        u_row[u_slice] = a_hat
        if integ:
            if n_b > 1:
                u_row[e_slice][: n_b - 1] = c_m
            u_row[layout["e_int"]] = b_coef.sum()
        else:
            if n_b:
                u_row[e_slice] = b_coef[1:]
        u_feed = b_coef[0]

        A = np.zeros((n, n))
        B = np.zeros((n, 1))
        A[:n_xm, :n_xm] = A_M
        B[:n_xm, 0] = B_M[:, 0]
        if n_a:
            A[u_slice.start] = u_row
            B[u_slice.start, 0] = u_feed
            for i in range(1, n_a):
                A[u_slice.start + i, u_slice.start + i - 1] = 1.0
        if n_b:
            A[e_slice.start, :n_xm] = -cm_row
            B[e_slice.start, 0] = 1.0
            for j in range(1, n_b):
                A[e_slice.start + j, e_slice.start + j - 1] = 1.0
        if integ:
            ei = layout["e_int"]
            A[ei, :n_xm] = -cm_row
            A[ei, ei] = 1.0
            B[ei, 0] = 1.0

        C = np.zeros((2, n))
        C[0, :n_xm] = cm_row
        C[1] = u_row
        D = np.array([[0.0], [u_feed]])
        return A, B, C, D

    inner = LpvStateSpace.from_callables(n, 1, 2, evaluate)
    return AugmentedModel(inner, M, ctrl, lags, layout)


def evaluate_at(model: AugmentedModel, p_vector):
    return model.evaluate_at(p_vector)


def simulate_augmented(model: AugmentedModel, g: SampledSignal, p: SampledSignal,
                       xi0=None):
    """Run the augmented recursion over a (g, p) trajectory.

    Returns (outputs, states): outputs has shape (n, 2) with columns [y, u].
    Pre-record scheduling lags clamp to p[0].
    """
    if len(g) != len(p):
        raise ValueError("g and p must have equal length")
    n = len(g)
    xi = model.initial_state() if xi0 is None else np.asarray(xi0, dtype=float).copy()
    gv, pv = g.values, p.values
    outs = np.empty((n, 2))
    states = np.empty((n + 1, model.n_state))
    for t in range(n):
        pi = scheduling_vector(pv, t, model.scheduling_lags)
        A, B, C, D = model.evaluate_at(pi)
        states[t] = xi
        outs[t] = C @ xi + D[:, 0] * gv[t]
        xi = A @ xi + B[:, 0] * gv[t]
    states[n] = xi
    return outs, states


def _augmented_dict(model: AugmentedModel) -> dict:
    return {
        "format": "lpvdd-augmented",
        "version": 1,
        "reference_model": model.reference_model.to_dict(),
        "controller": _controller_dict(model.controller),
        "scheduling_lags": list(model.scheduling_lags),
        "layout": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in model.layout.items()},
    }


def save_augmented(model: AugmentedModel, path) -> None:
    Path(path).write_text(json.dumps(_augmented_dict(model), indent=1))


def load_augmented(path) -> AugmentedModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "lpvdd-augmented":
        raise ValueError(f"{path}: not a serialized augmented model")
    # rebuild through the constructor to keep one source of truth
    ctrl = controller_from_dict(doc["controller"])
    M = LpvStateSpace.from_dict(doc["reference_model"])
    model = build_augmented(M, ctrl)
    if list(model.scheduling_lags) != doc["scheduling_lags"]:
        raise ValueError("serialized scheduling lags inconsistent with structure")
    return model
