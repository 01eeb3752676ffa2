"""Dense strictly convex quadratic programming.

    minimize    0.5 z'Hz + f'z
    subject to  A_in z <= b_in   (plus optional box bounds)

Solved by a primal-dual active-set method of Goldfarb-Idnani type: start at
the unconstrained minimizer, repeatedly activate the most-violated constraint
(lowest index on ties), taking full primal steps or partial dual steps that
drop blocking constraints. Equality-constrained subproblems use a null-space
method built on the QR factorization of the active rows. The method needs no
feasible starting point and certifies infeasibility when a violated
constraint's normal is a nonnegative-weighted combination of active normals.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

__all__ = ["QpProblem", "QpSolution", "QpError", "solve"]


class QpError(ValueError):
    pass


@dataclass(frozen=True)
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    A_in: Optional[np.ndarray] = None
    b_in: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        f = np.asarray(self.f, dtype=float).ravel()
        n = f.size
        if H.shape != (n, n):
            raise QpError(f"H has shape {H.shape}, expected {(n, n)}")
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-10:
            raise QpError("H is not symmetric (tolerance 1e-10)")
        object.__setattr__(self, "H", 0.5 * (H + H.T))
        object.__setattr__(self, "f", f)
        A = self.A_in
        b = self.b_in
        if (A is None) != (b is None):
            raise QpError("A_in and b_in must be given together")
        if A is not None:
            A = np.atleast_2d(np.asarray(A, dtype=float))
            b = np.asarray(b, dtype=float).ravel()
            if A.shape[1] != n or A.shape[0] != b.size:
                raise QpError("inconsistent inequality dimensions")
            object.__setattr__(self, "A_in", A)
            object.__setattr__(self, "b_in", b)

    @property
    def n(self):
        return self.f.size

    def stacked_inequalities(self):
        """All inequalities as rows (bounds folded in)."""
        n = self.n
        rows, rhs = [], []
        if self.A_in is not None:
            rows.append(self.A_in)
            rhs.append(self.b_in)
        for sign, bound in ((1.0, self.ub), (-1.0, self.lb)):
            if bound is None:
                continue
            bound = np.asarray(bound, dtype=float).ravel()
            finite = np.isfinite(bound)
            if finite.any():
                eye = sign * np.eye(n)[finite]
                rows.append(eye)
                rhs.append(sign * bound[finite])
        if not rows:
            return np.zeros((0, n)), np.zeros(0)
        return np.vstack(rows), np.concatenate(rhs)


@dataclass
class QpSolution:
    z: np.ndarray
    objective: float
    status: str  # "optimal" | "max-iterations" | "infeasible-detected"
    iterations: int
    kkt_residual: float
    active_set: list = field(default_factory=list)
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _regularized_cholesky(H):
    w = scipy.linalg.eigvalsh(H)
    lo = w[0]
    if lo < -1e-8:
        raise QpError(f"H is not positive semidefinite (min eigenvalue {lo:.3e})")
    if lo < 1e-9:
        H = H + 1e-9 * np.eye(H.shape[0])
    return H, scipy.linalg.cho_factor(H, lower=True, check_finite=False)


def solve(problem: QpProblem, tol: float = 1e-8, max_iter: int = 200,
          warm_start: Optional[list] = None) -> QpSolution:
    """Solve the QP; deterministic given the problem and warm-start hint."""
    H, chol = _regularized_cholesky(problem.H)
    f = problem.f
    A, b = problem.stacked_inequalities()
    m = A.shape[0]
    n = problem.n

    z = -scipy.linalg.cho_solve(chol, f, check_finite=False)
    work: list[int] = []
    lam: list[float] = []
    hint = [i for i in (warm_start or []) if 0 <= i < m]
    scale = max(1.0, float(np.max(np.abs(b), initial=0.0)))
    iters = 0
    stalled = 0

    def subproblem(p_row):
        """Step directions (dz, r) for entering normal a_p with working set."""
        a_p = A[p_row]
        if not work:
            dz = -scipy.linalg.cho_solve(chol, a_p, check_finite=False)
            return dz, np.zeros(0)
        Aw = A[work]
        q = len(work)
        Q, R = scipy.linalg.qr(Aw.T)  # Aw' = Q[:, :q] @ R[:q]
        Z = Q[:, q:]
        if Z.shape[1]:
            rhs = -(Z.T @ a_p)
            w = scipy.linalg.solve(Z.T @ H @ Z, rhs, assume_a="pos")
            dz = Z @ w
        else:
            dz = np.zeros(n)
        r = scipy.linalg.solve_triangular(R[:q], -(Q[:, :q].T @ (a_p + H @ dz)))
        return dz, r

    while iters < max_iter:
        iters += 1
        s = A @ z - b if m else np.zeros(0)
        viol = s > tol * scale
        if not viol.any():
            lam_arr = np.zeros(m)
            for i, li in zip(work, lam):
                lam_arr[i] = li
            kkt = _kkt_residual(H, f, A, b, z, lam_arr)
            return QpSolution(z, _objective(problem, z), "optimal", iters, kkt,
                              sorted(work), lam_arr)
        # entering constraint: warm-start hints first, then most violated
        # (lowest index on ties); pure lowest-index after a stall (Bland).
        p = None
        for h in hint:
            if viol[h] and h not in work:
                p = h
                break
        hint = []
        if p is None:
            p = int(np.flatnonzero(viol)[0]) if stalled > 3 * n else int(np.argmax(s))

        lam_p = 0.0
        while True:
            dz, r = subproblem(p)
            slope = float(A[p] @ dz)
            # dual step bound: multipliers moving toward zero; ties drop the
            # lowest constraint index (Bland-style)
            cands = [(-li / r[idx], idx) for idx, li in enumerate(lam) if r[idx] < -1e-14]
            t1 = min((c for c, _ in cands), default=np.inf)
            drop = min((idx for c, idx in cands if c <= t1 + 1e-12),
                       key=lambda idx: work[idx], default=-1)
            t2 = np.inf
            if slope < -1e-14:
                t2 = max(float(A[p] @ z - b[p]), 0.0) / (-slope)
            t = min(t1, t2)
            if not np.isfinite(t):
                return QpSolution(z, _objective(problem, z), "infeasible-detected",
                                  iters, np.inf, sorted(work), np.zeros(m))
            if t <= 1e-15:
                stalled += 1
            else:
                stalled = 0
            z = z + t * dz
            lam = [li + t * ri for li, ri in zip(lam, r)]
            lam_p += t
            if t == t2:
                work.append(p)
                lam.append(lam_p)
                break
            # partial step: drop the blocking constraint, stay on p
            work.pop(drop)
            lam.pop(drop)

    lam_arr = np.zeros(m)
    for i, li in zip(work, lam):
        lam_arr[i] = li
    return QpSolution(z, _objective(problem, z), "max-iterations", iters,
                      _kkt_residual(H, f, A, b, z, lam_arr), sorted(work), lam_arr)


def _objective(problem: QpProblem, z):
    return float(0.5 * z @ problem.H @ z + problem.f @ z)


def _kkt_residual(H, f, A, b, z, lam):
    """max of stationarity, primal feasibility, dual feasibility and
    complementary slackness residuals."""
    stat = float(np.max(np.abs(H @ z + f + (A.T @ lam if lam.size else 0.0))))
    if A.shape[0]:
        s = A @ z - b
        prim = float(np.max(np.maximum(s, 0.0)))
        dual = float(np.max(np.maximum(-lam, 0.0)))
        comp = float(np.max(np.abs(lam * s)))
    else:
        prim = dual = comp = 0.0
    return max(stat, prim, dual, comp)
