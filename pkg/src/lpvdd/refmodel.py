"""Parameter-dependent state-space models and their left inversion.

A model evaluates (A, B, C, D) at a scheduling value. The standard
representation is a basis expansion A(p) = sum_i f_i(p) * A_i over a declared
list of named scalar basis functions (constant term always present); models
assembled by composition (the augmented governor model) instead supply
callables directly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .signals import SampledSignal, shift

__all__ = [
    "BASIS_FUNCTIONS",
    "LpvStateSpace",
    "LeftInverseFilter",
    "simulate",
    "left_inverse",
    "apply_inverse",
    "pole_cutoff_hz",
]

# Named scalar basis functions of the scheduling value, used by configs and
# serialized models. "1" must head every declared list.
BASIS_FUNCTIONS: dict[str, Callable[[float], float]] = {
    "1": lambda p: 1.0,
    "p": lambda p: p,
    "p^2": lambda p: p * p,
    "sin(p)": np.sin,
    "cos(p)": np.cos,
    "abs(p)": abs,
}


def pole_cutoff_hz(pole: float, sample_period: float) -> float:
    """Continuous-equivalent cutoff of a first-order discrete pole."""
    return -np.log(pole) / (2.0 * np.pi * sample_period)


class LpvStateSpace:
    """x(t+1) = A(p)x(t) + B(p)u(t); y(t) = C(p)x(t) + D(p)u(t)."""

    def __init__(self, n_x, n_u, n_y, eval_fn, *, basis_names=None, coeffs=None,
                 p_range=None):
        self.n_x = int(n_x)
        self.n_u = int(n_u)
        self.n_y = int(n_y)
        self._eval = eval_fn
        self.basis_names = tuple(basis_names) if basis_names else None
        self._coeffs = coeffs
        self.p_range = tuple(p_range) if p_range is not None else None

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_basis(cls, basis_names: Sequence[str], A, B, C, D, p_range=None):
        """Basis-expansion model; each of A, B, C, D is a list of matrices,
        one per basis function."""
        names = list(basis_names)
        if not names or names[0] != "1":
            raise ValueError("basis list must start with the constant function '1'")
        for name in names:
            if name not in BASIS_FUNCTIONS:
                raise ValueError(f"unknown basis function {name!r}")
        nb = len(names)
        stacks = []
        for part, mats in zip("ABCD", (A, B, C, D)):
            arr = np.array(mats, dtype=float)
            if arr.ndim == 2:  # single matrix: constant term only
                arr = np.concatenate([arr[None], np.zeros((nb - 1,) + arr.shape)])
            if arr.shape[0] != nb:
                raise ValueError(f"{part}: expected {nb} coefficient matrices")
            stacks.append(arr)
        A_s, B_s, C_s, D_s = stacks
        n_x = A_s.shape[1]
        n_u = B_s.shape[2]
        n_y = C_s.shape[1]
        if A_s.shape[1:] != (n_x, n_x) or B_s.shape[1:] != (n_x, n_u) \
                or C_s.shape[1:] != (n_y, n_x) or D_s.shape[1:] != (n_y, n_u):
            raise ValueError("inconsistent matrix dimensions")
        funcs = [BASIS_FUNCTIONS[name] for name in names]

        def evaluate(p):
            w = np.array([f(p) for f in funcs])
            return (np.tensordot(w, A_s, axes=1), np.tensordot(w, B_s, axes=1),
                    np.tensordot(w, C_s, axes=1), np.tensordot(w, D_s, axes=1))

        return cls(n_x, n_u, n_y, evaluate, basis_names=names,
                   coeffs=(A_s, B_s, C_s, D_s), p_range=p_range)

    @classmethod
    def lti(cls, A, B, C, D=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        C = np.atleast_2d(np.asarray(C, dtype=float))
        if D is None:
            D = np.zeros((C.shape[0], B.shape[1]))
        return cls.from_basis(["1"], A, B, C, np.atleast_2d(np.asarray(D, dtype=float)))

    @classmethod
    def first_order(cls, pole: float, gain: Optional[float] = None):
        """x(t+1) = pole*x + gain*g; y = x. Default gain 1 - pole (unit DC)."""
        g = (1.0 - pole) if gain is None else gain
        return cls.lti([[pole]], [[g]], [[1.0]])

    @classmethod
    def from_callables(cls, n_x, n_u, n_y, eval_fn):
        return cls(n_x, n_u, n_y, eval_fn)

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, p):
        A, B, C, D = self._eval(p)
        if A.shape != (self.n_x, self.n_x):
            raise ValueError(f"A(p) has shape {A.shape}, expected {(self.n_x, self.n_x)}")
        return A, B, C, D

    @property
    def is_lti(self):
        if self._coeffs is None:
            return False
        return all(not np.any(stack[1:]) for stack in self._coeffs)

    @property
    def is_siso(self):
        return self.n_u == 1 and self.n_y == 1

    # -- serialization (basis models only) ----------------------------------

    def to_dict(self):
        if self._coeffs is None:
            raise ValueError("only basis-expansion models serialize directly")
        A_s, B_s, C_s, D_s = self._coeffs
        return {
            "basis": list(self.basis_names),
            "A": A_s.tolist(), "B": B_s.tolist(), "C": C_s.tolist(), "D": D_s.tolist(),
            "p_range": list(self.p_range) if self.p_range else None,
        }

    @classmethod
    def from_dict(cls, d):
        return cls.from_basis(d["basis"], d["A"], d["B"], d["C"], d["D"],
                              p_range=d.get("p_range"))


def simulate(model: LpvStateSpace, input_signal: SampledSignal,
             p: SampledSignal, x0=None):
    """Run the model recursion; returns (output, state trajectory).

    The state trajectory has shape (n+1, n_x) with row t holding x(t); the
    extra final row is x(n), useful for seeding estimators.
    """
    if not model.is_siso:
        raise ValueError("simulate expects a SISO model")
    n = len(input_signal)
    if len(p) != n:
        raise ValueError("input and scheduling must have equal length")
    x = np.zeros(model.n_x) if x0 is None else np.asarray(x0, dtype=float).reshape(model.n_x)
    uv = input_signal.values
    pv = p.values
    out = np.empty(n)
    states = np.empty((n + 1, model.n_x))
    lti = model.is_lti
    if lti:
        A, B, C, D = model.evaluate(0.0)
    for t in range(n):
        if not lti:
            A, B, C, D = model.evaluate(pv[t])
        states[t] = x
        out[t] = float(C @ x) + D[0, 0] * uv[t]
        x = A @ x + B[:, 0] * uv[t]
    states[n] = x
    return (SampledSignal(out, input_signal.sample_period, input_signal.start_index),
            states)


@dataclass(frozen=True)
class LeftInverseFilter:
    """Reconstructs the model input from its output.

    ``relative_degree`` r is 0 (direct feedthrough) or 1 (first Markov
    parameter C*B). The batch output is causal: sample t of the result holds
    the reconstructed input at t - r, so the first r samples are unavailable
    and advancing the output by r samples recovers the original input.
    """

    source: LpvStateSpace
    relative_degree: int


_GRID = 65


def _scheduling_grid(model: LpvStateSpace):
    if model.is_lti or model._coeffs is None:
        return np.array([0.0])
    if model.p_range is None:
        raise ValueError("parameter-dependent model needs p_range for inversion checks")
    return np.linspace(model.p_range[0], model.p_range[1], _GRID)


def left_inverse(model: LpvStateSpace) -> LeftInverseFilter:
    """Build the left inverse of a SISO model with relative degree 0 or 1."""
    if not model.is_siso:
        raise ValueError("left inverse supported for SISO models only")
    grid = _scheduling_grid(model)
    D_vals = np.array([model.evaluate(p)[3][0, 0] for p in grid])
    if np.all(np.abs(D_vals) >= 1e-12):
        return LeftInverseFilter(model, 0)
    if np.any(np.abs(D_vals) >= 1e-12):
        raise ValueError("D(p) changes between zero and nonzero over the scheduling set")
    # r = 1: need C(p')B(p) bounded away from zero for scheduling pairs
    C_vals = [model.evaluate(p)[2] for p in grid]
    B_vals = [model.evaluate(p)[1] for p in grid]
    cb = np.array([[float(Cp @ Bq) for Bq in B_vals] for Cp in C_vals])
    if np.min(np.abs(cb)) < 1e-12:
        raise ValueError(
            "leading Markov parameter C(p')B(p) not bounded away from zero; "
            "relative degree > 1 is unsupported")
    return LeftInverseFilter(model, 1)


def apply_inverse(filt: LeftInverseFilter, y: SampledSignal, p: SampledSignal,
                  x0=None) -> SampledSignal:
    """Batch-apply the left inverse to a recorded output."""
    model = filt.source
    r = filt.relative_degree
    n = len(y)
    if n < r + 1:
        raise ValueError("output record shorter than relative degree + 1")
    if len(p) != n:
        raise ValueError("y and p must have equal length")
    x = np.zeros(model.n_x) if x0 is None else np.asarray(x0, dtype=float).reshape(model.n_x)
    yv = y.values
    pv = p.values
    lti = model.is_lti
    if lti:
        A, B, C, D = model.evaluate(0.0)
    g = np.full(n, np.nan)
    if r == 0:
        for t in range(n):
            if not lti:
                A, B, C, D = model.evaluate(pv[t])
            gt = (yv[t] - float(C @ x)) / D[0, 0]
            g[t] = gt
            if model.n_x:
                x = A @ x + B[:, 0] * gt
        valid = np.ones(n, dtype=bool)
    else:
        # g*(t) = [y(t+1) - C(p(t+1)) A(p(t)) x(t)] / [C(p(t+1)) B(p(t))],
        # stored causally at slot t+1.
        if lti:
            Cn = C
        for t in range(n - 1):
            if not lti:
                A, B, _, _ = model.evaluate(pv[t])
                Cn = model.evaluate(pv[t + 1])[2]
            gt = (yv[t + 1] - float(Cn @ (A @ x))) / float(Cn @ B[:, 0])
            g[t + 1] = gt
            x = A @ x + B[:, 0] * gt
        valid = np.ones(n, dtype=bool)
        valid[0] = False
    valid &= ~np.isnan(g)
    return SampledSignal(g, y.sample_period, y.start_index, valid)


def virtual_reference(filt: LeftInverseFilter, y: SampledSignal,
                      p: SampledSignal, x0=None) -> SampledSignal:
    """Time-aligned reconstructed input: sample t holds g*(t) (the last
    ``relative_degree`` samples are unavailable)."""
    return shift(apply_inverse(filt, y, p, x0), -filt.relative_degree)
