"""Identification of the inner model-reference controller from logged data.

The controller has the IO form

    A(q) u(t) = B(q) ebar(t),   A(q) = 1 + a_1 q^-1 + ... + a_na q^-na,
                                B(q) = b_0 + b_1 q^-1 + ... + b_nb q^-nb,

where ebar is the tracking error, optionally pre-filtered by a fixed part
(a discrete integrator), and every coefficient a_i, b_j is a function of the
lagged scheduling vector Pi(t). Coefficient functions are either a linear
combination of declared basis functions or a Gaussian-kernel expansion over
retained training scheduling vectors.

Fitting replaces the unknown tracking error by the virtual error
e*(t) = (M^+ y)(t) - y(t) built from the measured output and the reference
model's left inverse, then solves a ridge-regularized least-squares problem
or, when an instrument log from a repeated experiment is available, its
instrumental-variable counterpart.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from . import _accel
from .refmodel import BASIS_FUNCTIONS, LpvStateSpace, left_inverse, virtual_reference
from .signals import ExperimentLog, SampledSignal

__all__ = [
    "KernelCoefficients",
    "ParametricCoefficients",
    "ControllerStructure",
    "RegressionSystem",
    "InnerControllerModel",
    "ControllerState",
    "prefilter_fixed_part",
    "build_kernel_features",
    "build_regression",
    "fit_ls",
    "fit_iv",
    "fit_inner",
    "cross_validate",
    "controller_step",
    "save_controller",
    "load_controller",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParametricCoefficients:
    """Coefficient functions as a linear combination of named basis functions.

    The constant function applies once; every other listed function is applied
    to each component of the scheduling vector.
    """

    basis: tuple = ("1",)

    def __post_init__(self):
        if not self.basis or self.basis[0] != "1":
            raise ValueError("basis list must start with '1'")
        for name in self.basis:
            if name not in BASIS_FUNCTIONS:
                raise ValueError(f"unknown basis function {name!r}")

    def n_features(self, n_sched: int) -> int:
        return 1 + (len(self.basis) - 1) * n_sched

    def features(self, pi: np.ndarray) -> np.ndarray:
        pi = np.atleast_2d(pi)
        cols = [np.ones(pi.shape[0])]
        for name in self.basis[1:]:
            f = BASIS_FUNCTIONS[name]
            for j in range(pi.shape[1]):
                cols.append(np.array([f(v) for v in pi[:, j]]))
        return np.column_stack(cols)


@dataclass(frozen=True)
class KernelCoefficients:
    """Gaussian-kernel coefficient functions kappa(q, c) = exp(-||q-c||^2/sigma).

    ``center_stride`` keeps every k-th valid training sample as a kernel
    center to bound the regression width.
    """

    sigma: float
    center_stride: int = 1
    centers: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if self.center_stride < 1:
            raise ValueError("center_stride must be >= 1")
        if self.centers is not None:
            arr = np.atleast_2d(np.asarray(self.centers, dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, "centers", arr)

    def n_features(self, n_sched: int) -> int:
        if self.centers is None:
            raise ValueError("kernel centers not selected yet")
        return self.centers.shape[0]

    def with_centers(self, pi_rows: np.ndarray) -> "KernelCoefficients":
        return replace(self, centers=pi_rows[:: self.center_stride].copy())

    def features(self, pi: np.ndarray) -> np.ndarray:
        if self.centers is None:
            raise ValueError("kernel centers not selected yet")
        return _accel.gaussian_features(np.atleast_2d(pi), self.centers, self.sigma)


def build_kernel_features(pi_train: np.ndarray, pi_query, sigma: float) -> np.ndarray:
    """Gaussian features of one query scheduling vector against the centers."""
    q = np.atleast_2d(np.asarray(pi_query, dtype=float))
    return _accel.gaussian_features(q, np.atleast_2d(pi_train), sigma)[0]


@dataclass(frozen=True)
class ControllerStructure:
    """Orders, scheduling lags, coefficient model and fixed part."""

    n_a: int
    n_b: int
    scheduling_lags: tuple = (1,)
    coefficient_model: object = ParametricCoefficients()
    fixed_part: Optional[str] = None  # None or "integrator"
    gamma: float = 1e4

    def __post_init__(self):
        if self.n_a < 0 or self.n_b < 0 or (self.n_a == 0 and self.n_b == 0):
            raise ValueError("need n_a >= 0, n_b >= 0 and at least one positive")
        if self.fixed_part not in (None, "integrator"):
            raise ValueError("fixed_part must be None or 'integrator' "
                             "(other unstable fixed parts are rejected)")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        object.__setattr__(self, "scheduling_lags", tuple(int(l) for l in self.scheduling_lags))
        if any(l < 0 for l in self.scheduling_lags) or not self.scheduling_lags:
            raise ValueError("scheduling_lags must be non-negative and non-empty")

    @property
    def n_structural(self) -> int:
        return self.n_a + self.n_b + 1

    @property
    def max_lag(self) -> int:
        return max(self.scheduling_lags)


def prefilter_fixed_part(signal: SampledSignal, fixed: Optional[str]) -> SampledSignal:
    """Pass an error signal through the fixed controller part.

    'integrator': ebar(t) = ebar(t-1) + e(t) (zero initial accumulator);
    None: identity. An unavailable sample poisons everything after it.
    """
    if fixed is None:
        return signal
    if fixed != "integrator":
        raise ValueError("only the identity or a single integrator fixed part is supported")
    valid = np.logical_and.accumulate(signal.valid)
    vals = np.where(valid, np.nan_to_num(signal.values, nan=0.0), np.nan)
    return signal.with_values(np.cumsum(vals), valid)


@dataclass(frozen=True)
class RegressionSystem:
    """Stacked regressor rows, targets and optional instrument rows."""

    rows: np.ndarray
    targets: np.ndarray
    instruments: Optional[np.ndarray] = None
    times: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.rows.shape[0] != self.targets.shape[0]:
            raise ValueError("rows and targets must have equal counts")
        if self.instruments is not None and self.instruments.shape != self.rows.shape:
            raise ValueError("instruments must match rows in shape")

    @property
    def n_rows(self):
        return self.rows.shape[0]


def _lagged_matrix(values: np.ndarray, valid: np.ndarray, lags: Sequence[int]):
    """Columns values[t - lag] with validity, NaN outside the record."""
    n = values.size
    cols = np.full((n, len(lags)), np.nan)
    ok = np.zeros((n, len(lags)), dtype=bool)
    for j, lag in enumerate(lags):
        if lag == 0:
            cols[:, j] = values
            ok[:, j] = valid
        elif lag > 0:
            cols[lag:, j] = values[:-lag]
            ok[lag:, j] = valid[:-lag]
        else:
            cols[:lag, j] = values[-lag:]
            ok[:lag, j] = valid[-lag:]
    return cols, ok


def _virtual_error(log_: ExperimentLog, M: LpvStateSpace) -> SampledSignal:
    filt = left_inverse(M)
    gstar = virtual_reference(filt, log_.y, log_.p)
    vals = gstar.values - log_.y.values
    return SampledSignal(vals, log_.u.sample_period, log_.u.start_index,
                         gstar.valid & log_.y.valid)


def _structural_parts(log_: ExperimentLog, structure: ControllerStructure,
                      M: LpvStateSpace):
    """Structural columns, per-row scheduling vectors and the validity mask."""
    e = _virtual_error(log_, M)
    ebar = prefilter_fixed_part(e, structure.fixed_part)
    u_vals, u_valid = log_.u.values, log_.u.valid

    a_cols, a_ok = _lagged_matrix(u_vals, u_valid, range(1, structure.n_a + 1))
    b_cols, b_ok = _lagged_matrix(ebar.values, ebar.valid, range(0, structure.n_b + 1))
    pi_cols, pi_ok = _lagged_matrix(log_.p.values, log_.p.valid, structure.scheduling_lags)

    mask = u_valid & a_ok.all(axis=1) & b_ok.all(axis=1) & pi_ok.all(axis=1)
    structural = np.hstack([-a_cols, b_cols])
    return structural, pi_cols, mask


def build_regression(log_: ExperimentLog, instrument_log: Optional[ExperimentLog],
                     structure: ControllerStructure, M: LpvStateSpace,
                     coefficient_model=None):
    """Assemble the identification problem.

    Returns (system, coefficient_model) where the coefficient model carries
    the selected kernel centers (unchanged for parametric models). Each row is
    the Kronecker product of the structural entries
    [-u(t-1..t-n_a), ebar(t..t-n_b)] with the coefficient-function features of
    Pi(t); the target is u(t). Rows touching any unavailable sample are
    dropped. Instrument rows, when an instrument log is given, repeat the
    construction with that log's output and scheduling.
    """
    cm = coefficient_model if coefficient_model is not None else structure.coefficient_model
    structural, pi_rows, mask = _structural_parts(log_, structure, M)

    if instrument_log is not None:
        if instrument_log.n != log_.n:
            raise ValueError("instrument log length differs from training log")
        structural_z, pi_z, mask_z = _structural_parts(instrument_log, structure, M)
        mask = mask & mask_z

    if not mask.any():
        raise ValueError("no valid regression rows (log too short for the lags?)")

    if isinstance(cm, KernelCoefficients) and cm.centers is None:
        cm = cm.with_centers(pi_rows[mask])

    def expand(struct, pis):
        feats = cm.features(pis[mask])
        return np.einsum("ns,nf->nsf", struct[mask], feats).reshape(mask.sum(), -1)

    rows = expand(structural, pi_rows)
    targets = log_.u.values[mask]
    instruments = expand(structural_z, pi_z) if instrument_log is not None else None
    system = RegressionSystem(rows, targets, instruments, np.flatnonzero(mask))
    return system, cm


def _chol_solve(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    c, low = scipy.linalg.cho_factor(mat, lower=True, check_finite=False)
    d = np.diag(c)
    cond_est = (d.max() / d.min()) ** 2
    if cond_est > 1e12:
        log.warning("normal equations badly conditioned (estimate %.2e)", cond_est)
    return scipy.linalg.cho_solve((c, low), rhs, check_finite=False)


def fit_ls(system: RegressionSystem, gamma: float) -> np.ndarray:
    """Ridge least squares: (Phi'Phi/N + I/gamma) theta = Phi'tau/N."""
    if system.n_rows == 0:
        raise ValueError("empty regression system")
    n = system.n_rows
    phi = system.rows
    gram = phi.T @ phi / n + np.eye(phi.shape[1]) / gamma
    return _chol_solve(gram, phi.T @ system.targets / n)


def fit_iv(system: RegressionSystem, gamma: float) -> np.ndarray:
    """Instrumental-variable fit via the cross-moment normal equations."""
    if system.instruments is None:
        raise ValueError("instrument rows required for the IV fit")
    n = system.n_rows
    s_zp = system.instruments.T @ system.rows / n
    s_zt = system.instruments.T @ system.targets / n
    mat = s_zp.T @ s_zp + np.eye(s_zp.shape[1]) / gamma
    return _chol_solve(mat, s_zp.T @ s_zt)


@dataclass(frozen=True)
class InnerControllerModel:
    """A fitted inner controller.

    ``theta`` has shape (n_structural, n_features); row order is
    a_1..a_na, b_0..b_nb with the convention A(q)u = B(q)ebar,
    A(q) = 1 + sum a_i q^-i (so the realized recursion negates the a's).
    """

    structure: ControllerStructure
    coefficient_model: object
    theta: np.ndarray
    reference_model: LpvStateSpace
    fit_info: dict = field(default_factory=dict)

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        n_feat = self.coefficient_model.n_features(len(self.structure.scheduling_lags))
        theta = theta.reshape(self.structure.n_structural, n_feat)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def coefficients(self, pi) -> tuple[np.ndarray, np.ndarray]:
        """(a, b) polynomial coefficients at one scheduling vector."""
        feats = self.coefficient_model.features(np.atleast_2d(pi))[0]
        vals = self.theta @ feats
        return vals[: self.structure.n_a], vals[self.structure.n_a:]


class ControllerState:
    """Per-loop mutable history for the controller recursion."""

    __slots__ = ("u_hist", "ebar_hist", "e_int", "p_hist")

    def __init__(self, structure: ControllerStructure, p0: float = 0.0):
        self.u_hist = [0.0] * structure.n_a
        self.ebar_hist = [0.0] * structure.n_b
        self.e_int = 0.0
        self.p_hist = [float(p0)] * max(structure.max_lag, 1)

    def seed_scheduling(self, p0: float):
        self.p_hist = [float(p0)] * len(self.p_hist)


def controller_step(ctrl: InnerControllerModel, state: ControllerState,
                    g: float, y: float, p_now: float) -> float:
    """One controller update; mutates ``state`` and returns u(t).

    The scheduling vector uses p_now for lag 0 and the stored history for
    positive lags; p_now is pushed into the history afterwards.
    """
    st = ctrl.structure
    pi = np.array([p_now if l == 0 else state.p_hist[l - 1] for l in st.scheduling_lags])
    a, b = ctrl.coefficients(pi)
    e = g - y
    ebar_now = state.e_int + e if st.fixed_part == "integrator" else e
    u = -float(np.dot(a, state.u_hist[: st.n_a])) + b[0] * ebar_now
    if st.n_b:
        u += float(np.dot(b[1:], state.ebar_hist[: st.n_b]))
    if st.n_a:
        state.u_hist = [u] + state.u_hist[:-1]
    if st.n_b:
        state.ebar_hist = [ebar_now] + state.ebar_hist[:-1]
    if st.fixed_part == "integrator":
        state.e_int = ebar_now
    state.p_hist = [float(p_now)] + state.p_hist[:-1]
    return u


def fit_inner(log_: ExperimentLog, instrument_log: Optional[ExperimentLog],
              structure: ControllerStructure, M: LpvStateSpace,
              gamma: Optional[float] = None, method: Optional[str] = None,
              ) -> InnerControllerModel:
    """Build the regression and fit; IV when an instrument log is present."""
    gamma = structure.gamma if gamma is None else gamma
    if method is None:
        method = "iv" if instrument_log is not None else "ls"
    system, cm = build_regression(log_, instrument_log if method == "iv" else None,
                                  structure, M)
    theta = fit_iv(system, gamma) if method == "iv" else fit_ls(system, gamma)
    resid = system.targets - system.rows @ theta
    info = {
        "method": method,
        "gamma": gamma,
        "n_rows": int(system.n_rows),
        "residual_rms": float(np.sqrt(np.mean(resid ** 2))),
    }
    return InnerControllerModel(structure, cm, theta, M, info)


def validation_score(ctrl: InnerControllerModel, log_: ExperimentLog) -> float:
    """Mean squared equation residual of a fitted controller on a fresh log."""
    system, _ = build_regression(log_, None, ctrl.structure, ctrl.reference_model,
                                 coefficient_model=ctrl.coefficient_model)
    resid = system.targets - system.rows @ ctrl.theta.ravel()
    return float(np.mean(resid ** 2))


def cross_validate(log_train: ExperimentLog, log_val: ExperimentLog,
                   grid: Sequence[tuple], structure: ControllerStructure,
                   M: LpvStateSpace, instrument_log=None):
    """Pick (gamma, sigma) minimizing the validation equation residual.

    ``grid`` is a sequence of (gamma, sigma) pairs; sigma is ignored for
    parametric coefficient models. Ties break toward larger gamma, then larger
    sigma.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty hyperparameter grid")
    best = None
    results = []
    for gamma, sigma in grid:
        st = structure
        if isinstance(structure.coefficient_model, KernelCoefficients):
            st = replace(structure,
                         coefficient_model=replace(structure.coefficient_model,
                                                   sigma=sigma, centers=None))
        ctrl = fit_inner(log_train, instrument_log, st, M, gamma=gamma)
        score = validation_score(ctrl, log_val)
        results.append({"gamma": gamma, "sigma": sigma, "score": score})
        key = (score, -gamma, -(sigma if sigma is not None else 0.0))
        if best is None or key < best[0]:
            best = (key, (gamma, sigma), ctrl)
    return best[1], best[2], results


# --- serialization ----------------------------------------------------------


def _controller_dict(ctrl: InnerControllerModel) -> dict:
    st = ctrl.structure
    cm = ctrl.coefficient_model
    if isinstance(cm, KernelCoefficients):
        cm_doc = {"type": "kernel", "sigma": cm.sigma,
                  "center_stride": cm.center_stride,
                  "centers": cm.centers.tolist()}
    else:
        cm_doc = {"type": "parametric", "basis": list(cm.basis)}
    return {
        "format": "lpvdd-controller",
        "version": 1,
        "structure": {
            "n_a": st.n_a, "n_b": st.n_b,
            "scheduling_lags": list(st.scheduling_lags),
            "fixed_part": st.fixed_part, "gamma": st.gamma,
        },
        "coefficient_model": cm_doc,
        "theta": ctrl.theta.tolist(),
        "reference_model": ctrl.reference_model.to_dict(),
        "fit_info": ctrl.fit_info,
    }


def controller_from_dict(doc: dict) -> InnerControllerModel:
    cm_doc = doc["coefficient_model"]
    if cm_doc["type"] == "kernel":
        cm = KernelCoefficients(cm_doc["sigma"], cm_doc["center_stride"],
                                np.array(cm_doc["centers"]))
    else:
        cm = ParametricCoefficients(tuple(cm_doc["basis"]))
    st_doc = doc["structure"]
    structure = ControllerStructure(
        n_a=st_doc["n_a"], n_b=st_doc["n_b"],
        scheduling_lags=tuple(st_doc["scheduling_lags"]),
        coefficient_model=cm, fixed_part=st_doc["fixed_part"],
        gamma=st_doc["gamma"],
    )
    return InnerControllerModel(structure, cm, np.array(doc["theta"]),
                                LpvStateSpace.from_dict(doc["reference_model"]),
                                doc.get("fit_info", {}))


def save_controller(ctrl: InnerControllerModel, path) -> None:
    Path(path).write_text(json.dumps(_controller_dict(ctrl), indent=1))


def load_controller(path) -> InnerControllerModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "lpvdd-controller":
        raise ValueError(f"{path}: not a serialized controller")
    return controller_from_dict(doc)
