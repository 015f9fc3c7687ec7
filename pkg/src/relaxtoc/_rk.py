"""Dormand-Prince 5(4) stepping primitives shared by the integrators."""

from __future__ import annotations

import numpy as np

# Classic DOPRI5 tableau; the first-same-as-last stage doubles as the next k1.
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
SAFETY = 0.9


def step(rhs, t, y, f, h):
    """One trial step from (t, y) with f = rhs(t, y).

    Returns (y_new, f_new, err_norm); err_norm is the embedded error estimate
    scaled by unit tolerance, to be divided by the caller's scale vector.
    """
    k = [f]
    for i in range(1, 7):
        yi = y + h * (np.stack(k[: len(A[i])], axis=0).T @ A[i])
        k.append(rhs(t + C[i] * h, yi))
    karr = np.stack(k, axis=0)
    y_new = y + h * (karr.T @ B5)
    err = h * (karr.T @ E)
    return y_new, k[6], err


def error_norm(err, y0, y1, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def next_factor(err_norm):
    if err_norm == 0.0:
        return MAX_FACTOR
    return min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * err_norm ** -0.2))


def initial_step(rhs, t0, y0, f0, direction, rtol, atol):
    """Hairer-style first step guess from the local solution scale."""
    scale = atol + rtol * np.abs(y0)
    d0 = float(np.sqrt(np.mean((y0 / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((f0 / scale) ** 2)))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * direction * f0
    f1 = rhs(t0 + h0 * direction, y1)
    d2 = float(np.sqrt(np.mean(((f1 - f0) / scale) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1)


def hermite(t0, y0, f0, t1, y1, f1, t):
    """Cubic Hermite interpolation between two accepted samples."""
    h = t1 - t0
    if h == 0.0:
        return y0.copy()
    s = (t - t0) / h
    s2 = s * s
    s3 = s2 * s
    return (
        (2 * s3 - 3 * s2 + 1) * y0
        + (s3 - 2 * s2 + s) * h * f0
        + (-2 * s3 + 3 * s2) * y1
        + (s3 - s2) * h * f1
    )


def integrate_plain(rhs, t0, t1, y0, rtol, atol, knots=(), max_steps=200_000, record=None):
    """Adaptive integration without events; supports t1 < t0 (backward).

    atol may be a scalar or a vector.  knots are interior times where the rhs
    may be discontinuous; steps land on them exactly.  When `record` is a
    sorted array of times (in travel order) the state is recorded exactly at
    those times and (times, states) is returned; otherwise the terminal state.
    """
    y = np.asarray(y0, dtype=float).copy()
    t = float(t0)
    direction = 1.0 if t1 >= t0 else -1.0
    span = abs(t1 - t0)
    if span == 0.0:
        if record is not None:
            return np.array([t0]), y[None, :].copy()
        return y
    stops = sorted({float(k) for k in knots if min(t0, t1) < k < max(t0, t1)} | {float(t1)})
    if direction < 0:
        stops = stops[::-1]
    rec_times = None if record is None else list(record)
    rec_out = []
    rec_states = []
    if rec_times:
        # Record the initial time if requested.
        while rec_times and (rec_times[0] - t) * direction <= 1e-16 * max(1.0, abs(t)):
            rec_out.append(rec_times.pop(0))
            rec_states.append(y.copy())

    f = rhs(t, y)
    h = min(initial_step(rhs, t, y, f, direction, rtol, np.max(np.atleast_1d(atol))), span)
    n_steps = 0
    for stop in stops:
        while (stop - t) * direction > 1e-15 * max(1.0, abs(t)):
            h = min(h, abs(stop - t))
            while True:
                n_steps += 1
                if n_steps > max_steps:
                    raise RuntimeError("step budget exhausted in plain integration")
                t_new = t + direction * h
                y_new, f_new, err = step(rhs, t, y, f, direction * h)
                scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
                err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
                if err_norm <= 1.0:
                    break
                h *= next_factor(err_norm)
                if h < 1e-15 * max(1.0, abs(t)):
                    raise RuntimeError("step underflow in plain integration")
            if rec_times:
                while rec_times and (rec_times[0] - t_new) * direction <= 0.0:
                    tr = rec_times.pop(0)
                    rec_out.append(tr)
                    rec_states.append(hermite(t, y, f, t_new, y_new, f_new, tr))
            t, y, f = t_new, y_new, f_new
            h *= next_factor(err_norm)
    if record is not None:
        # Anything left records the terminal state (guards roundoff at t1).
        for tr in rec_times:
            rec_out.append(tr)
            rec_states.append(y.copy())
        return np.array(rec_out), np.array(rec_states)
    return y
