"""Adaptive forward integration with target-hit events, plus adjoint sweeps.

The forward driver runs an embedded Runge-Kutta 4/5 pair and stops at the
first time the distance to the (inflated) target drops to the hit tolerance.
The crossing is localized by bisection on the distance along the dense output
of the final step, then sharpened by one linear extrapolation of the distance
decay rate to distance zero; the stored terminal sample stays on the computed
trajectory, so its distance is at most the hit tolerance.

Systems with a compactification chart integrate in chart coordinates outside
the switch radius (hysteresis band [r1, 2 r1]); for such systems the target
is interpreted in chart coordinates.  Step underflow near a singular set is
reported as a "singular-stall" status, never as a crash.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _rk, errors
from .dynamics import ControlSystem
from .relaxed import ClassicalSchedule, RelaxedSchedule
from .target import HalfSpace, Hyperplane

HIT_TARGET = "hit-target"
MAX_TIME = "max-time"
SINGULAR_STALL = "singular-stall"
DIVERGED = "diverged"

_STALL_FLOOR = 1e-14


@dataclass(frozen=True)
class IntegratorOptions:
    rtol: float = 1e-9
    atol: float = 1e-11
    hit_tol: float = 1e-8
    max_steps: int = 500_000
    max_step: float = np.inf
    divergence_radius: float = 1e12


@dataclass
class HitInfo:
    status: str
    time: float
    terminal_distance: float


class _StageFailure(Exception):
    """Internal: a stage evaluation left the admissible region; retry smaller."""


@dataclass(eq=False)
class Trajectory:
    """Accepted samples of one integration, always in original coordinates.

    in_chart[i] tells whether the segment starting at sample i was integrated
    in chart coordinates; interpolation honors that so dense evaluation keeps
    the accuracy of the underlying representation.
    """

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    in_chart: np.ndarray
    hit: HitInfo
    chart: object = None

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def segment_of(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(max(i, 0), len(self.times) - 2)

    def interp(self, t: float) -> np.ndarray:
        if len(self.times) == 1:
            return self.states[0].copy()
        i = self.segment_of(t)
        ta, tb = self.times[i], self.times[i + 1]
        ya, yb = self.states[i], self.states[i + 1]
        fa, fb = self.derivs[i], self.derivs[i + 1]
        if self.in_chart[i] and self.chart is not None:
            za, zb = self.chart.to_chart(ya), self.chart.to_chart(yb)
            ga, gb = self.chart.push_velocity(ya, fa), self.chart.push_velocity(yb, fb)
            return self.chart.from_chart(_rk.hermite(ta, za, ga, tb, zb, gb, t))
        return _rk.hermite(ta, ya, fa, tb, yb, fb, t)

    def switch_times(self):
        flips = np.nonzero(self.in_chart[1:] != self.in_chart[:-1])[0]
        return tuple(float(self.times[i + 1]) for i in flips)

    def write_csv(self, path, adjoint: "AdjointTrajectory" = None) -> None:
        n = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["t"] + [f"y{i}" for i in range(n)] + [f"dy{i}" for i in range(n)]
            header.append("in_chart")
            if adjoint is not None:
                header += [f"psi{i}" for i in range(n)]
            w.writerow(header)
            psi_lookup = None
            if adjoint is not None:
                psi_lookup = {float(t): p for t, p in zip(adjoint.times, adjoint.psis)}
            for i, t in enumerate(self.times):
                row = [f"{t:.17g}"]
                row += [f"{v:.17g}" for v in self.states[i]]
                row += [f"{v:.17g}" for v in self.derivs[i]]
                row.append(str(int(self.in_chart[i])))
                if psi_lookup is not None:
                    psi = psi_lookup.get(float(t))
                    row += [f"{v:.17g}" for v in psi] if psi is not None else [""] * n
                w.writerow(row)


@dataclass(eq=False)
class AdjointTrajectory:
    """Backward costate samples sharing times with a forward trajectory."""

    times: np.ndarray
    psis: np.ndarray
    seed_time: float
    seed: np.ndarray
    normalization: float

    def norm_at_end(self) -> float:
        return float(np.linalg.norm(self.psis[-1]))

    def norm_at_zero(self) -> float:
        return float(np.linalg.norm(self.psis[0]))


def _resolve_cell(control, sys, t_mid):
    """(atoms, weights) active at t_mid; None control means u = 0."""
    if control is None:
        return np.zeros((1, sys.dim_control)), np.ones(1)
    if isinstance(control, ClassicalSchedule):
        return control.value_at(t_mid)[None, :], np.ones(1)
    atoms, weights = control.cell_at(t_mid)
    return atoms, weights


def _cell_rhs(sys, atoms, weights, mode, chart):
    """Guarded rhs closure for one (control cell, coordinate mode) segment."""
    affine = sys.affine is not None
    u_mean = weights @ atoms if affine else None
    live = [(lam, atom) for lam, atom in zip(weights, atoms) if lam > 0.0]

    def base_field(t, y):
        with np.errstate(all="ignore"):
            if affine:
                out = sys.field(t, y, u_mean)
            else:
                out = None
                for lam, atom in live:
                    term = lam * np.asarray(sys.field(t, y, atom), dtype=float)
                    out = term if out is None else out + term
        out = np.asarray(out, dtype=float)
        if not np.all(np.isfinite(out)):
            raise _StageFailure
        return out

    if not mode:
        return base_field

    def chart_field(t, z):
        with np.errstate(all="ignore"):
            nz = float(np.sqrt(z @ z))
            if not (nz > 0.0) or not np.isfinite(nz):
                raise _StageFailure
            y = chart.from_chart(z)
        v = base_field(t, y)
        out = chart.push_velocity(y, v)
        if not np.all(np.isfinite(out)):
            raise _StageFailure
        return out

    return chart_field


def _bisect(g, t_lo, t_hi, width):
    """Shrink [t_lo, t_hi] with g(t_lo) False, g(t_hi) True; returns bracket."""
    for _ in range(60):
        if t_hi - t_lo <= width:
            break
        mid = 0.5 * (t_lo + t_hi)
        if g(mid):
            t_hi = mid
        else:
            t_lo = mid
    return t_lo, t_hi


_INV_PHI = 0.5 * (np.sqrt(5.0) - 1.0)


def _golden_min(g, a, b, iters=48):
    """Golden-section minimum of g on [a, b]; returns (argmin, min)."""
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    gc, gd = g(c), g(d)
    for _ in range(iters):
        if gc <= gd:
            b, d, gd = d, c, gc
            c = b - _INV_PHI * (b - a)
            gc = g(c)
        else:
            a, c, gc = c, d, gd
            d = a + _INV_PHI * (b - a)
            gd = g(d)
    return (c, gc) if gc <= gd else (d, gd)


def integrate_forward(
    sys: ControlSystem,
    control,
    y0,
    tgt=None,
    t_max: float = 1.0,
    opts: Optional[IntegratorOptions] = None,
) -> Trajectory:
    """Integrate y' = f(t, y, u(t)) from t = 0, stopping at the first target hit.

    control is a relaxed or classical schedule (or None for u = 0); tgt is an
    inflated target set, interpreted in chart coordinates when the system has
    a compactification chart.  Statuses: hit-target, max-time, singular-stall,
    diverged.
    """
    opts = opts or IntegratorOptions()
    if t_max <= 0.0:
        raise ValueError("t_max must be positive")
    y0 = np.asarray(y0, dtype=float).copy()
    chart = sys.chart
    r1 = chart.effective_r1(float(np.linalg.norm(y0))) if chart is not None else None

    def distance_of(state, mode):
        if tgt is None:
            return np.inf
        try:
            z = state if mode else (chart.to_chart(state) if chart is not None else state)
        except errors.InnerRegion:
            return np.inf
        return tgt.distance(z)

    # Signed gap for flat targets: a sign change between scan samples flags a
    # transversal pass straight through the target interior within one step.
    signed_of = None
    if chart is None and isinstance(tgt, Hyperplane):
        signed_of = lambda s: float(s[tgt.axis]) - tgt.level
    elif chart is None and isinstance(tgt, HalfSpace):
        signed_of = lambda s: float(tgt.normal @ s) - (tgt.offset + tgt.alpha)

    mode = False
    state = y0
    if chart is not None and float(np.linalg.norm(y0)) >= 2.0 * r1:
        mode = True
        state = chart.to_chart(y0)

    d0 = distance_of(state, mode)
    if tgt is not None and d0 <= opts.hit_tol:
        raise ValueError("initial state already within the hit tolerance of the target")

    knots = {float(t_max)}
    knots.update(k for k in sys.time_knots if 0.0 < k < t_max)
    if control is not None:
        knots.update(k for k in control.knots if 0.0 < k < t_max)
    knots = np.array(sorted(knots))

    def to_y(s, m):
        return chart.from_chart(s) if m else s

    def to_ydot(s, v, m):
        return chart.pull_velocity(s, v) if m else v

    def gap_and_rate(s, v, m):
        """(distance, d/dt distance) to the inflated target, chart-aware."""
        if chart is not None and not m:
            z = chart.to_chart(s)
            zdot = chart.push_velocity(s, v)
        else:
            z, zdot = s, v
        gap = z - tgt.project(z)
        gn = float(np.linalg.norm(gap))
        if gn == 0.0:
            return 0.0, 0.0
        return gn, float(gap @ zdot) / gn

    times = [0.0]
    states_y = []
    derivs_y = []
    flags = []

    t = 0.0
    seg_end = None
    rhs = None
    f = None
    n_steps = 0
    h = None
    status = None
    hit_time = None
    terminal_distance = distance_of(state, mode)
    d_state = terminal_distance

    def emit(t_s, s_s, f_s, m_s):
        states_y.append(to_y(s_s, m_s))
        derivs_y.append(to_ydot(s_s, f_s, m_s))
        flags.append(m_s)

    def new_segment():
        nonlocal seg_end, rhs, f
        idx = int(np.searchsorted(knots, t, side="right"))
        seg_end = float(knots[idx]) if idx < len(knots) else float(t_max)
        atoms, weights = _resolve_cell(control, sys, 0.5 * (t + seg_end))
        rhs = _cell_rhs(sys, atoms, weights, mode, chart)
        try:
            f = rhs(t, state)
        except _StageFailure:
            raise errors.SingularState("field not evaluable at the segment start")

    new_segment()
    emit(t, state, f, mode)
    h = _rk.initial_step(rhs, t, state, f, 1.0, opts.rtol, opts.atol)

    while status is None:
        if t >= t_max - 1e-15 * max(1.0, t_max):
            status = MAX_TIME
            hit_time = t
            break
        if t >= seg_end - 1e-15 * max(1.0, abs(seg_end)):
            new_segment()
        h_try = min(h, seg_end - t, opts.max_step)
        if tgt is not None and np.isfinite(d_state) and d_state > 0.0:
            # while the distance is shrinking, cap h so a single step cannot
            # overshoot the target; the approach then resolves geometrically
            _, d_rate = gap_and_rate(state, f, mode)
            if d_rate < 0.0:
                h_appr = 0.8 * max(d_state - 0.25 * opts.hit_tol, 0.25 * opts.hit_tol) / (-d_rate)
                h_try = min(h_try, h_appr)
        n_steps += 1
        if n_steps > opts.max_steps:
            raise RuntimeError("forward integration exceeded the step budget")
        try:
            s_new, f_new, err = _rk.step(rhs, t, state, f, h_try)
            scale = opts.atol + opts.rtol * np.maximum(np.abs(state), np.abs(s_new))
            err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
            failed = not np.all(np.isfinite(s_new))
        except _StageFailure:
            err_norm = np.inf
            failed = True
        if failed or err_norm > 1.0:
            h = h_try * (0.5 if not np.isfinite(err_norm) else _rk.next_factor(err_norm))
            if h < _STALL_FLOOR * max(1.0, abs(t)):
                status = SINGULAR_STALL
                hit_time = t
                terminal_distance = distance_of(state, mode)
            continue

        t_new = t + h_try

        def dense(tau):
            return _rk.hermite(t, state, f, t_new, s_new, f_new, tau)

        # --- event scan on the accepted step (first trigger wins) ---
        event = None  # (time, kind)

        if tgt is not None:
            taus = [t] + [t + th * h_try for th in (0.25, 0.5, 0.75)] + [t_new]
            dvals = [d_state] + [
                distance_of(s_new if tau == t_new else dense(tau), mode)
                for tau in taus[1:]
            ]

            def entry(lo_t, hi_t):
                _, hi = _bisect(
                    lambda x: distance_of(dense(x), mode) <= opts.hit_tol,
                    lo_t,
                    hi_t,
                    1e-15 * max(1.0, abs(hi_t)),
                )
                return hi, "hit"

            for j in range(1, len(taus)):
                if dvals[j] <= opts.hit_tol:
                    event = entry(taus[j - 1], taus[j])
                    break
            if event is None:
                j = 1 + int(np.argmin(dvals[1:4]))
                if dvals[j] < dvals[0] and dvals[j] < dvals[-1]:
                    # interior dip: the step may graze the target between samples
                    tau_m, d_m = _golden_min(
                        lambda x: distance_of(dense(x), mode), taus[j - 1], taus[j + 1]
                    )
                    if d_m <= opts.hit_tol:
                        event = entry(taus[0], tau_m)
            if event is None and signed_of is not None:
                svals = [signed_of(s_new if tau == t_new else dense(tau)) for tau in taus]
                for j in range(1, len(taus)):
                    if svals[j - 1] * svals[j] < 0.0:
                        _, cross = _bisect(
                            lambda x: signed_of(dense(x)) * svals[j - 1] <= 0.0,
                            taus[j - 1],
                            taus[j],
                            1e-15 * max(1.0, abs(taus[j])),
                        )
                        event = entry(taus[j - 1], cross)
                        break

        if chart is not None and event is None:
            if not mode:
                yn = float(np.linalg.norm(s_new))
                if yn >= 2.0 * r1:
                    lo, hi = _bisect(
                        lambda x: float(np.linalg.norm(dense(x))) >= 2.0 * r1,
                        t,
                        t_new,
                        1e-15 * max(1.0, abs(t_new)),
                    )
                    event = (hi, "chart-in")
            else:
                zn = float(np.linalg.norm(s_new))
                if zn ** (-1.0 / chart.gamma) <= r1:
                    lo, hi = _bisect(
                        lambda x: float(np.linalg.norm(dense(x))) ** (-1.0 / chart.gamma)
                        <= r1,
                        t,
                        t_new,
                        1e-15 * max(1.0, abs(t_new)),
                    )
                    event = (hi, "chart-out")

        if event is None:
            if chart is None:
                if float(np.linalg.norm(s_new)) > opts.divergence_radius:
                    event = (t_new, "diverged")
            elif mode:
                # |z| -> 0 is |y| -> infinity; without a target there to stop
                # at, the state has left every compact set: report divergence.
                # The band sits above atol: past z = 0 the chart field flips
                # sign, so the solution chatters at the atol scale and would
                # never reach a narrower band.
                zn = float(np.linalg.norm(s_new))
                if zn <= max(opts.divergence_radius ** (-chart.gamma), 10.0 * opts.atol):
                    event = (t_new, "diverged")

        if event is None:
            times.append(t_new)
            emit(t_new, s_new, f_new, mode)
            t, state, f = t_new, s_new, f_new
            d_state = distance_of(state, mode)
            h = h_try * _rk.next_factor(err_norm)
            continue

        tau, kind = event
        s_tau = s_new if tau == t_new else dense(tau)
        if kind == "hit":
            d_ev = distance_of(s_tau, mode)
            try:
                f_tau = rhs(tau, s_tau)
            except _StageFailure:
                f_tau = f_new
            z_tau = s_tau if mode else (chart.to_chart(s_tau) if chart else s_tau)
            zdot = (
                f_tau
                if (chart is None or mode)
                else chart.push_velocity(s_tau, f_tau)
            )
            gap = z_tau - tgt.project(z_tau)
            gn = float(np.linalg.norm(gap))
            rate = float(gap @ zdot) / gn if gn > 0.0 else 0.0
            extra = d_ev / max(-rate, 1e-300) if rate < 0.0 else 0.0
            times.append(tau)
            emit(tau, s_tau, f_tau, mode)
            status = HIT_TARGET
            hit_time = tau + min(extra, h_try)
            terminal_distance = d_ev
        elif kind == "diverged":
            times.append(tau)
            emit(tau, s_tau, f_new, mode)
            status = DIVERGED
            hit_time = tau
            terminal_distance = distance_of(s_tau, mode)
        else:
            try:
                f_tau = rhs(tau, s_tau)
            except _StageFailure:
                f_tau = f_new
            times.append(tau)
            emit(tau, s_tau, f_tau, mode)
            y_here = to_y(s_tau, mode)
            mode = kind == "chart-in"
            state = chart.to_chart(y_here) if mode else y_here
            flags[-1] = mode
            t = tau
            d_state = distance_of(state, mode)
            new_segment()
            h = h_try * _rk.next_factor(err_norm)

    if status in (MAX_TIME, SINGULAR_STALL):
        terminal_distance = distance_of(state, mode)

    traj = Trajectory(
        times=np.array(times),
        states=np.array(states_y),
        derivs=np.array(derivs_y),
        in_chart=np.array(flags, dtype=bool),
        hit=HitInfo(status=status, time=float(hit_time), terminal_distance=float(terminal_distance)),
        chart=chart,
    )
    return traj


def integrate_adjoint(
    sys: ControlSystem,
    traj: Trajectory,
    control,
    terminal_psi,
    t_end: Optional[float] = None,
    normalize_at_zero: bool = True,
    opts: Optional[IntegratorOptions] = None,
) -> AdjointTrajectory:
    """Integrate psi' = -jacobian(t, y(t), u(t)) psi backward from t_end to 0.

    The jacobian is in gradient layout so no transpose appears.  For relaxed
    controls the jacobian is weight-averaged over the cell atoms.  atol is
    scaled by the seed magnitude, which makes the sweep exactly homogeneous:
    scaling the seed scales every sample.
    """
    opts = opts or IntegratorOptions()
    seed = np.asarray(terminal_psi, dtype=float).copy()
    seed_norm = float(np.linalg.norm(seed))
    if seed_norm == 0.0:
        raise errors.ZeroTerminalCovector("adjoint seed must be nonzero")
    t_end = float(traj.times[-1] if t_end is None else t_end)
    if t_end <= 0.0 or t_end > traj.times[-1] + 1e-12 * max(1.0, traj.times[-1]):
        raise ValueError("t_end must lie in (0, trajectory end]")

    sample_times = [float(t) for t in traj.times if t < t_end - 1e-15 * max(1.0, t_end)]
    sample_times.append(t_end)

    affine = sys.affine is not None

    def amat(t):
        y = traj.interp(t)
        if control is None:
            return np.asarray(sys.jacobian(t, y, np.zeros(sys.dim_control)), dtype=float)
        if isinstance(control, ClassicalSchedule) or affine:
            u = (
                control.value_at(t)
                if isinstance(control, ClassicalSchedule)
                else control.cell_at(t)[0][0]
            )
            return np.asarray(sys.jacobian(t, y, u), dtype=float)
        atoms, weights = control.cell_at(t)
        out = None
        for lam, atom in zip(weights, atoms):
            if lam <= 0.0:
                continue
            term = lam * np.asarray(sys.jacobian(t, y, atom), dtype=float)
            out = term if out is None else out + term
        return out

    def rhs(t, psi):
        return -(amat(t) @ psi)

    knots = set(sys.time_knots)
    if control is not None:
        knots.update(control.knots)
    knots.update(traj.switch_times())
    knots = tuple(k for k in knots if 0.0 < k < t_end)

    rec = np.array(sorted(sample_times, reverse=True))
    ts, psis = _rk.integrate_plain(
        rhs,
        t_end,
        0.0,
        seed,
        rtol=opts.rtol,
        atol=opts.atol * seed_norm,
        knots=knots,
        record=rec,
    )
    order = np.argsort(ts)
    ts = ts[order]
    psis = psis[order]
    factor = 1.0
    if normalize_at_zero:
        n0 = float(np.linalg.norm(psis[0]))
        if n0 == 0.0:
            raise errors.ZeroTerminalCovector("adjoint vanished at t = 0")
        factor = 1.0 / n0
        psis = psis * factor
    return AdjointTrajectory(
        times=ts, psis=psis, seed_time=t_end, seed=seed, normalization=factor
    )


def rescale_to_unit_time(traj: Trajectory) -> Trajectory:
    """Reparameterize a hitting trajectory to s = t / w on [0, 1]."""
    if traj.hit.status != HIT_TARGET or traj.hit.time <= 0.0:
        raise errors.NotHit("unit-time rescaling needs a finite positive hit time")
    w = traj.hit.time
    return Trajectory(
        times=traj.times / w,
        states=traj.states.copy(),
        derivs=traj.derivs * w,
        in_chart=traj.in_chart.copy(),
        hit=HitInfo(status=traj.hit.status, time=1.0, terminal_distance=traj.hit.terminal_distance),
        chart=traj.chart,
    )


def continuity_probe(sys, schedules, reference: Trajectory, horizon: float, opts=None):
    """Sup-norm trajectory gaps of each schedule against a reference trajectory.

    All runs start from the reference initial state with no target; gaps are
    measured on the reference sample times within the horizon.
    """
    opts = opts or IntegratorOptions()
    y0 = reference.states[0]
    mask = reference.times <= horizon
    ts = reference.times[mask]
    ys = reference.states[mask]
    gaps = []
    for sched in schedules:
        tr = integrate_forward(sys, sched, y0, tgt=None, t_max=horizon, opts=opts)
        gap = 0.0
        for t, y in zip(ts, ys):
            gap = max(gap, float(np.linalg.norm(tr.interp(min(t, tr.times[-1])) - y)))
        gaps.append(gap)
    return gaps
