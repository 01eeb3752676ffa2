"""Hot numeric kernels, JIT-compiled with numba when available.

Every kernel has a pure-numpy (or plain-Python loop) fallback so the package
runs without a working numba install. Selection happens once at import time:

  * ``LPVDD_NUMBA=0`` (or ``false``/``no``) forces the fallback path;
  * otherwise numba is used when importable.

``benchmarks/bench_accel.py`` times the two paths against each other.
"""
from __future__ import annotations

import os

import numpy as np

_flag = os.environ.get("LPVDD_NUMBA", "1").strip().lower()
NUMBA_REQUESTED = _flag not in ("0", "false", "no", "off")

if NUMBA_REQUESTED:
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False
else:
    NUMBA_ENABLED = False

if not NUMBA_ENABLED:
    def njit(*args, **kwargs):  # noqa: D103 - passthrough decorator
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


@njit(cache=True)
def _sinc_like(theta):
    # sin(t)/t with the removable singularity filled by its series.
    if abs(theta) < 1e-6:
        return 1.0 - theta * theta / 6.0
    return np.sin(theta) / theta


@njit(cache=True)
def dc_motor_rk4(params, state0, u_zoh, sample_period, substeps):
    """Integrate the DC-motor ODE under zero-order-hold input.

    params = (R, L, K, J, b, m, l, g_accel). Row k of the result holds the
    state (theta, omega, current) at time (k+1)*Ts, i.e. after applying
    u_zoh[k] for one period. Fixed-step RK4 with ``substeps`` internal steps
    per sample period; integration stops early (short array) on non-finite
    state.
    """
    R, L, K, J, b, m, l, g_accel = params
    n = u_zoh.shape[0]
    out = np.empty((n, 3))
    th = state0[0]
    om = state0[1]
    cur = state0[2]
    h = sample_period / substeps
    for k in range(n):
        v = u_zoh[k]
        for _ in range(substeps):
            # stage 1
            s1t = (1.0 + _sinc_like(th)) * om
            s1o = (m * g_accel * l / J) * _sinc_like(th) * th - (b / J) * om + (K / J) * cur
            s1i = -(K / L) * om - (R / L) * cur + v / L
            # stage 2
            th2 = th + 0.5 * h * s1t
            om2 = om + 0.5 * h * s1o
            cu2 = cur + 0.5 * h * s1i
            s2t = (1.0 + _sinc_like(th2)) * om2
            s2o = (m * g_accel * l / J) * _sinc_like(th2) * th2 - (b / J) * om2 + (K / J) * cu2
            s2i = -(K / L) * om2 - (R / L) * cu2 + v / L
            # stage 3
            th3 = th + 0.5 * h * s2t
            om3 = om + 0.5 * h * s2o
            cu3 = cur + 0.5 * h * s2i
            s3t = (1.0 + _sinc_like(th3)) * om3
            s3o = (m * g_accel * l / J) * _sinc_like(th3) * th3 - (b / J) * om3 + (K / J) * cu3
            s3i = -(K / L) * om3 - (R / L) * cu3 + v / L
            # stage 4
            th4 = th + h * s3t
            om4 = om + h * s3o
            cu4 = cur + h * s3i
            s4t = (1.0 + _sinc_like(th4)) * om4
            s4o = (m * g_accel * l / J) * _sinc_like(th4) * th4 - (b / J) * om4 + (K / J) * cu4
            s4i = -(K / L) * om4 - (R / L) * cu4 + v / L
            th += h * (s1t + 2.0 * s2t + 2.0 * s3t + s4t) / 6.0
            om += h * (s1o + 2.0 * s2o + 2.0 * s3o + s4o) / 6.0
            cur += h * (s1i + 2.0 * s2i + 2.0 * s3i + s4i) / 6.0
        out[k, 0] = th
        out[k, 1] = om
        out[k, 2] = cur
        if not (np.isfinite(th) and np.isfinite(om) and np.isfinite(cur)):
            return out[: k + 1]
    return out


@njit(cache=True)
def switched_rc_recursion(a_on, b_on, a_off, b_off, y0, u, s):
    """One-step recursion y(t+1) = a(s(t))*y(t) + b(s(t))*u(t).

    Returns y aligned with u: out[t] is the output *at* time t (out[0] = y0).
    """
    n = u.shape[0]
    out = np.empty(n)
    y = y0
    for t in range(n):
        out[t] = y
        if s[t] > 0.5:
            y = a_on * y + b_on * u[t]
        else:
            y = a_off * y + b_off * u[t]
    return out


def _gaussian_features_py(queries, centers, sigma):
    d = queries[:, None, :] - centers[None, :, :]
    return np.exp(-(d * d).sum(axis=2) / sigma)


@njit(cache=True)
def _gaussian_features_nb(queries, centers, sigma):
    n = queries.shape[0]
    m = centers.shape[0]
    dim = queries.shape[1]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(dim):
                diff = queries[i, k] - centers[j, k]
                acc += diff * diff
            out[i, j] = np.exp(-acc / sigma)
    return out


def gaussian_features(queries, centers, sigma):
    """exp(-||q - c||^2 / sigma) for every query/center pair, shape (n, m)."""
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    if NUMBA_ENABLED:
        return _gaussian_features_nb(queries, centers, sigma)
    return _gaussian_features_py(queries, centers, sigma)


def _one_pole_py(x, pole, y0):
    from scipy.signal import lfilter

    b = np.array([1.0 - pole])
    a = np.array([1.0, -pole])
    zi = np.array([pole * y0])
    y, _ = lfilter(b, a, x, zi=zi)
    return y


@njit(cache=True)
def _one_pole_nb(x, pole, y0):
    n = x.shape[0]
    out = np.empty(n)
    y = y0
    for t in range(n):
        y = pole * y + (1.0 - pole) * x[t]
        out[t] = y
    return out


def one_pole_lowpass(x, pole, y0=0.0):
    """Unity-DC-gain one-pole low-pass: y(t) = pole*y(t-1) + (1-pole)*x(t)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if NUMBA_ENABLED:
        return _one_pole_nb(x, pole, y0)
    return _one_pole_py(x, pole, y0)
