"""State sources for the outer optimizer.

Two ways to produce the augmented state xi(t):

* a linear time-varying Kalman filter driven by the applied reference g and
  the measured pair (y(t), u(t-1)) — the second measurement is the previously
  applied input, which is a state entry of the shift-register realization, so
  the measurement map has no feedthrough and pins the controller sub-states;

* direct reconstruction, which mirrors the exactly known controller histories
  and propagates the reference-model state open loop (optionally anchoring it
  to the measured output when the output map is invertible).
"""
from __future__ import annotations

import numpy as np

from .realization import AugmentedModel

__all__ = ["EstimatorError", "KalmanFilter", "DirectReconstructor", "kf_step"]


class EstimatorError(RuntimeError):
    pass


class KalmanFilter:
    """LTV Kalman filter on the augmented model."""

    def __init__(self, model: AugmentedModel, Q=1e-6, R=(1e-4, 1e-6),
                 x0=None, P0=1.0):
        self.model = model
        n = model.n_state
        self.Q = Q * np.eye(n) if np.isscalar(Q) else np.asarray(Q, dtype=float)
        R = np.asarray(R, dtype=float)
        self.R = np.diag(R) if R.ndim == 1 else R
        if self.Q.shape != (n, n) or self.R.shape != (2, 2):
            raise ValueError("Q must be (n, n) and R (2, 2) or a 2-vector")
        self.x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
        self.P = P0 * np.eye(n) if np.isscalar(P0) else np.asarray(P0, dtype=float).copy()
        self._last_pi = None

    def _measurement_map(self, pi):
        """Rows mapping xi(t) to [y(t); u(t-1)]."""
        model = self.model
        C_full = model.evaluate_at(pi)[2]
        lay = model.layout
        n = model.n_state
        if lay["u_hist"][1] > lay["u_hist"][0]:
            Cu = np.zeros(n)
            Cu[lay["u_hist"][0]] = 1.0
            C = np.vstack([C_full[0], Cu])
            R = self.R
        else:
            C = C_full[:1]
            R = self.R[:1, :1]
        return C, R

    def advance(self, g_applied: float, measured, pi) -> np.ndarray:
        """Predict with the applied reference, then update.

        ``measured`` is (y(t), u(t-1)): the current output sample and the
        input applied during the previous period. ``pi`` is the scheduling
        lag vector at the current time; the predict step uses the vector
        stored from the previous call.
        """
        pi = np.asarray(pi, dtype=float)
        pi_prev = self._last_pi if self._last_pi is not None else pi
        A, B, _, _ = self.model.evaluate_at(pi_prev)
        self.x = A @ self.x + B[:, 0] * g_applied
        self.P = A @ self.P @ A.T + self.Q

        C, R = self._measurement_map(pi)
        z = np.asarray(measured, dtype=float)[: C.shape[0]]
        S = C @ self.P @ C.T + R
        cond = np.linalg.cond(S)
        if not np.isfinite(cond) or cond > 1e14:
            raise EstimatorError(
                f"innovation covariance near singular (cond {cond:.3e}); "
                f"R diagonal {np.diag(R)}")
        K = self.P @ C.T @ np.linalg.inv(S)
        self.x = self.x + K @ (z - C @ self.x)
        IKC = np.eye(self.model.n_state) - K @ C
        self.P = IKC @ self.P @ IKC.T + K @ R @ K.T
        self.P = 0.5 * (self.P + self.P.T)
        self._last_pi = pi
        return self.x.copy()

    def estimate(self) -> np.ndarray:
        return self.x.copy()


def kf_step(filt: KalmanFilter, g_applied: float, measured, p_vector) -> np.ndarray:
    """One predict/update cycle; returns the posterior estimate."""
    return filt.advance(g_applied, measured, p_vector)


class DirectReconstructor:
    """Assemble xi from exactly known loop histories.

    The controller sub-states (past u, past e, integrator accumulator) are
    mirrored from the real loop; the reference-model state is propagated
    open loop, or anchored to the measured output when C is a nonzero scalar.
    """

    def __init__(self, model: AugmentedModel, anchor_output=True):
        self.model = model
        lay = model.layout
        self.u_hist = [0.0] * (lay["u_hist"][1] - lay["u_hist"][0])
        self.e_hist = [0.0] * (lay["e_hist"][1] - lay["e_hist"][0])
        self.e_int = 0.0
        self.x_m = np.zeros(model.reference_model.n_x)
        self.anchor_output = anchor_output and model.reference_model.n_x == 1
        self._last_pi = None

    def observe(self, y_meas: float, pi) -> None:
        """Fold the current output sample in (before the governor acts)."""
        if self.anchor_output:
            c = float(self.model.reference_model.evaluate(pi[0])[2][0, 0])
            if abs(c) > 1e-12:
                self.x_m = np.array([y_meas / c])
        self._last_pi = np.asarray(pi, dtype=float)

    def advance(self, g_applied: float, u_applied: float, e_now: float) -> None:
        """Push the step-t signals after the controller has acted."""
        pi = self._last_pi
        M = self.model.reference_model
        A_M, B_M, _, _ = M.evaluate(pi[0] if pi is not None else 0.0)
        self.x_m = A_M @ self.x_m + B_M[:, 0] * g_applied
        if self.u_hist:
            self.u_hist = [u_applied] + self.u_hist[:-1]
        if self.e_hist:
            self.e_hist = [e_now] + self.e_hist[:-1]
        self.e_int += e_now

    def estimate(self) -> np.ndarray:
        return self.model.state_from_histories(self.x_m, self.u_hist,
                                               self.e_hist, self.e_int)
