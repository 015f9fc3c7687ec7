"""Pontryagin-principle checks for candidate time-optimal triples.

The relaxed maximum principle asks for a nontrivial costate psi solving
psi' = -f_y(t, y(t), .) psi (gradient layout), with supp sigma(t) inside the
argmax set of u -> <psi(t), f(t, y(t), u)> a.e., and <psi(T), q - q(T)> >= 0
for every q in the (inflated) target.  verify() integrates the costate
backward from a normal-cone seed, normalizes |psi(0)| = 1, and fills a report
by sampling along the trajectory grid.  Nothing here certifies sufficiency;
the report measures how badly the necessary conditions fail.

Targets the state only reaches in the limit (a point target, or any set read
through a compactification chart) admit no terminal covector: the adjoint
norm vanishes as t -> T.  For those the seed is planted on a shrinking family
of pre-terminal times T - delta and the report carries the decay trend of
|psi| in place of a single terminal value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import errors
from .dynamics import BallSet, BoxSet, ControlSystem, FiniteSet, eval_field
from .integrate import (
    AdjointTrajectory,
    HIT_TARGET,
    IntegratorOptions,
    Trajectory,
    integrate_adjoint,
    integrate_forward,
)
from .relaxed import ClassicalSchedule, RelaxedSchedule, relaxed_field
from .target import Ball, HalfSpace, Hyperplane, Point, TargetSet, transformed_transversality_residual

DEFAULT_DELTAS = (1e-2, 1e-3, 1e-4)


@dataclass(frozen=True)
class FromNormalCone:
    """Marker: derive the terminal covector from the target's normal cone."""


class HamiltonianMax(NamedTuple):
    value: float
    control: np.ndarray
    degenerate: bool


def hamiltonian(sys: ControlSystem, t: float, y, psi, u) -> float:
    """<psi, f(t, y, u)>, guarded against evaluation on the singular set."""
    psi = np.asarray(psi, dtype=float)
    return float(psi @ eval_field(sys, t, y, u))


def _cell_of(control, sys, t):
    if control is None:
        return np.zeros((1, sys.dim_control)), np.ones(1)
    if isinstance(control, ClassicalSchedule):
        return control.value_at(t)[None, :], np.ones(1)
    return control.cell_at(t)


def relaxed_hamiltonian(sys: ControlSystem, t: float, y, psi, atoms, weights) -> float:
    """<psi, averaged field of the cell>; linear in the measure."""
    psi = np.asarray(psi, dtype=float)
    return float(psi @ relaxed_field(sys, t, y, atoms, weights))


def max_hamiltonian(sys: ControlSystem, t: float, y, psi) -> HamiltonianMax:
    """Maximize u -> <psi, f(t, y, u)> over the control set, in closed form.

    Finite sets are enumerated through the full field, so they work for any
    dynamics.  Ball and box sets require the affine decomposition
    f = g + B u: the maximizer is rho B^T psi / |B^T psi| for a ball and the
    componentwise sign rule for a box.  When B^T psi vanishes every control
    maximizes and the result is flagged degenerate (the principle says
    nothing at such times).
    """
    y = np.asarray(y, dtype=float)
    psi = np.asarray(psi, dtype=float)
    cs = sys.control_set

    if isinstance(cs, FiniteSet):
        vals = [float(psi @ np.asarray(sys.field(t, y, u), dtype=float)) for u in cs.points]
        order = np.argsort(vals)[::-1]
        best = int(order[0])
        tie = len(vals) > 1 and vals[best] - vals[int(order[1])] <= 1e-12 * (1.0 + abs(vals[best]))
        return HamiltonianMax(vals[best], np.array(cs.points[best], dtype=float), tie)

    if sys.affine is None:
        raise errors.UnsupportedControlSet(
            "closed-form argmax needs an affine system with a ball or box control set"
        )
    g = np.asarray(sys.affine.drift(t, y), dtype=float)
    B = np.atleast_2d(np.asarray(sys.affine.input_matrix(t), dtype=float))
    q = B.T @ psi
    base = float(psi @ g)
    scale = 1e-12 * (1.0 + float(np.linalg.norm(psi))) * max(1.0, float(np.linalg.norm(B)))

    if isinstance(cs, BallSet):
        qn = float(np.linalg.norm(q))
        if qn <= scale or cs.radius == 0.0:
            return HamiltonianMax(base, np.zeros(cs.dim), qn <= scale)
        u_star = (cs.radius / qn) * q
        return HamiltonianMax(base + cs.radius * qn, u_star, False)
    if isinstance(cs, BoxSet):
        mid = 0.5 * (cs.lower + cs.upper)
        u_star = np.where(q > 0.0, cs.upper, np.where(q < 0.0, cs.lower, mid))
        return HamiltonianMax(base + float(q @ u_star), u_star, float(np.max(np.abs(q))) <= scale)
    raise errors.UnsupportedControlSet(f"no closed-form argmax for {type(cs).__name__}")


# ---------------------------------------------------------------------------
# residual sampling


def _sample_grid(adjoint: AdjointTrajectory):
    """Midpoints of the shared trajectory/adjoint grid with their lengths."""
    ts = np.asarray(adjoint.times, dtype=float)
    mids = 0.5 * (ts[:-1] + ts[1:])
    lens = np.diff(ts)
    keep = lens > 0.0
    return mids[keep], lens[keep], ts, np.asarray(adjoint.psis, dtype=float)


def _psi_at(ts, psis, t):
    j = int(np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 2))
    th = (t - ts[j]) / (ts[j + 1] - ts[j])
    return (1.0 - th) * psis[j] + th * psis[j + 1]


def support_condition_mass(schedule, sys: ControlSystem, trajectory: Trajectory,
                           adjoint: AdjointTrajectory, tol_H: Optional[float] = None) -> float:
    """Time-averaged weight carried by atoms strictly off the argmax set.

    Zero means the support condition holds at tolerance; weight lambda parked
    on a strictly suboptimal atom for the whole horizon comes back as lambda.
    The default tolerance is 1e-6 * (1 + sup |max H|), relative because H
    scales with both psi and the field.
    """
    mids, lens, ts, psis = _sample_grid(adjoint)
    if len(mids) == 0:
        return 0.0
    rows = []
    sup_h = 0.0
    for t, dt in zip(mids, lens):
        y = trajectory.interp(t)
        psi = _psi_at(ts, psis, t)
        atoms, weights = _cell_of(schedule, sys, t)
        h_max = max_hamiltonian(sys, t, y, psi).value
        h_atoms = [float(psi @ np.asarray(sys.field(t, y, u), dtype=float)) for u in atoms]
        rows.append((dt, weights, h_atoms, h_max))
        sup_h = max(sup_h, abs(h_max))
    tol = tol_H if tol_H is not None else 1e-6 * (1.0 + sup_h)
    mass = 0.0
    for dt, weights, h_atoms, h_max in rows:
        off = sum(lam for lam, hv in zip(weights, h_atoms) if hv < h_max - tol)
        mass += dt * off
    return float(mass / np.sum(lens))


# ---------------------------------------------------------------------------
# terminal covector seeding


def _approach_direction(z_end, z_prev):
    step = z_end - z_prev
    n = float(np.linalg.norm(step))
    return step / n if n > 0.0 else None


def normal_cone_seed(tgt: TargetSet, z_end, z_prev) -> np.ndarray:
    """Unit covector psi with <psi, q - q*> >= 0 over the inflated target.

    Coordinates are the ones the target is expressed in.  z_prev disambiguates
    the approach side when the exit point is (numerically) on the target.
    """
    z_end = np.asarray(z_end, dtype=float)
    z_prev = np.asarray(z_prev, dtype=float)
    if isinstance(tgt, Hyperplane):
        side = np.sign(tgt.level - z_end[tgt.axis])
        if side == 0.0:
            side = np.sign(tgt.level - z_prev[tgt.axis]) or 1.0
        seed = np.zeros(z_end.size)
        seed[tgt.axis] = side
        return seed
    if isinstance(tgt, HalfSpace):
        return -tgt.normal
    if isinstance(tgt, (Ball, Point)):
        center = tgt.center if isinstance(tgt, Ball) else tgt.location
        gap = np.asarray(center, dtype=float) - z_end
        n = float(np.linalg.norm(gap))
        if n > 0.0:
            return gap / n
        direction = _approach_direction(z_end, z_prev)
        if direction is None:
            raise errors.ZeroTerminalCovector("no approach direction at the exit point")
        return direction
    raise errors.UnsupportedControlSet(f"no normal-cone seed rule for {type(tgt).__name__}")


# ---------------------------------------------------------------------------
# the report


@dataclass
class PmpReport:
    """Residuals of the maximum-principle necessary conditions.

    All residuals are nonnegative; nontriviality is |psi(0)| and equals 1
    exactly under the default normalization.  terminal_decay is None for
    regular targets and a ((delta, |psi(T - delta)|), ...) trend for targets
    seeded on the shrinking pre-terminal family.  Times where the argmax is
    degenerate are excluded from bang_bang_agreement and accounted in
    degenerate_time_fraction.
    """

    hamiltonian_residual: float
    hamiltonian_scale: float
    support_violation_mass: float
    transversality_residual: float
    terminal_adjoint_norm: float
    nontriviality: float
    bang_bang_agreement: float
    degenerate_time_fraction: float
    seed_time: float
    terminal_decay: Optional[tuple]
    adjoint: AdjointTrajectory

    def to_json_dict(self) -> dict:
        return {
            "hamiltonian_residual": self.hamiltonian_residual,
            "hamiltonian_scale": self.hamiltonian_scale,
            "support_violation_mass": self.support_violation_mass,
            "transversality_residual": self.transversality_residual,
            "terminal_adjoint_norm": self.terminal_adjoint_norm,
            "nontriviality": self.nontriviality,
            "bang_bang_agreement": self.bang_bang_agreement,
            "degenerate_time_fraction": self.degenerate_time_fraction,
            "seed_time": self.seed_time,
            "terminal_decay": None
            if self.terminal_decay is None
            else [[d, n] for d, n in self.terminal_decay],
        }

    def summary(self) -> str:
        rows = [
            ("hamiltonian residual", f"{self.hamiltonian_residual:.3e}"),
            ("hamiltonian scale", f"{self.hamiltonian_scale:.3e}"),
            ("support violation mass", f"{self.support_violation_mass:.3e}"),
            ("transversality residual", f"{self.transversality_residual:.3e}"),
            ("terminal adjoint norm", f"{self.terminal_adjoint_norm:.3e}"),
            ("nontriviality |psi(0)|", f"{self.nontriviality:.6f}"),
            ("bang-bang agreement", f"{self.bang_bang_agreement:.4f}"),
            ("degenerate time fraction", f"{self.degenerate_time_fraction:.4f}"),
            ("seed time", f"{self.seed_time:.9g}"),
        ]
        if self.terminal_decay is not None:
            trend = ", ".join(f"{n:.3e} @ delta={d:.1e}" for d, n in self.terminal_decay)
            rows.append(("terminal decay", trend))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)


def _unpack_triple(triple):
    if hasattr(triple, "trajectory"):
        return float(triple.w), triple.trajectory, triple.schedule
    w, traj, schedule = triple
    return float(w), traj, schedule


def _target_coords(sys, y):
    return sys.chart.to_chart(y) if sys.chart is not None else np.asarray(y, dtype=float)


def _seed_to_state_coords(sys, y_end, seed_z):
    if sys.chart is None:
        return seed_z
    return sys.chart.gradient_jacobian(y_end) @ seed_z


def verify(
    sys: ControlSystem,
    tgt: TargetSet,
    triple,
    adjoint_seed=None,
    deltas=DEFAULT_DELTAS,
    agreement_tol: float = 1e-3,
    opts: Optional[IntegratorOptions] = None,
) -> PmpReport:
    """Measure the maximum-principle residuals of a candidate triple.

    triple is (w, trajectory, schedule) or any object exposing those fields;
    the trajectory must have hit the target.  adjoint_seed is an explicit
    terminal covector, or FromNormalCone()/None to derive one from the target
    geometry at the exit point.  Point targets and chart-read targets are
    seeded at the pre-terminal family T - delta * T, delta from deltas, and
    the |psi| trend is reported in terminal_decay.
    """
    w, traj, schedule = _unpack_triple(triple)
    if traj.hit is None or traj.hit.status != HIT_TARGET:
        raise errors.NotHit("maximum-principle verification needs a hitting trajectory")
    # the reported hit time extrapolates past the last stored sample; the
    # adjoint can only be seeded on the sampled range
    t_bar = min(float(traj.hit.time), float(traj.times[-1]))
    explicit = adjoint_seed is not None and not isinstance(adjoint_seed, FromNormalCone)
    family = (isinstance(tgt, Point) or sys.chart is not None) and not explicit

    def seed_at(t_end):
        if explicit:
            return np.asarray(adjoint_seed, dtype=float)
        y_end = traj.interp(t_end)
        j = int(np.searchsorted(traj.times, t_end)) - 1
        y_prev = traj.states[max(j, 0)]
        seed_z = normal_cone_seed(tgt, _target_coords(sys, y_end), _target_coords(sys, y_prev))
        return _seed_to_state_coords(sys, y_end, seed_z)

    decay = None
    if family:
        norms = []
        adjoint = None
        for d in deltas:
            t_end = t_bar * (1.0 - d)
            adjoint = integrate_adjoint(sys, traj, schedule, seed_at(t_end), t_end=t_end, opts=opts)
            norms.append(adjoint.norm_at_end())
        decay = tuple((d * t_bar, n) for d, n in zip(deltas, norms))
        terminal_norm = norms[-1]
    else:
        adjoint = integrate_adjoint(sys, traj, schedule, seed_at(t_bar), t_end=t_bar, opts=opts)
        terminal_norm = adjoint.norm_at_end()

    # transversality at the exit point actually used for seeding
    t_end = adjoint.seed_time
    y_end = traj.interp(t_end)
    z_end = _target_coords(sys, y_end)
    psi_end = np.asarray(adjoint.psis[-1], dtype=float)
    q_star = tgt.project(z_end)
    if sys.chart is None:
        transversality = tgt.transversality_residual(q_star, psi_end)
    else:
        transversality = transformed_transversality_residual(
            tgt, sys.chart.gradient_jacobian(y_end), q_star, psi_end
        )

    mids, lens, ts, psis = _sample_grid(adjoint)
    total = float(np.sum(lens)) if len(lens) else 1.0
    residual = 0.0
    sup_h = 0.0
    degenerate_time = 0.0
    agree_time = 0.0
    live_time = 0.0
    for t, dt in zip(mids, lens):
        y = traj.interp(t)
        psi = _psi_at(ts, psis, t)
        atoms, weights = _cell_of(schedule, sys, t)
        best = max_hamiltonian(sys, t, y, psi)
        h_cand = relaxed_hamiltonian(sys, t, y, psi, atoms, weights)
        residual = max(residual, best.value - h_cand)
        sup_h = max(sup_h, abs(best.value))
        if best.degenerate:
            degenerate_time += dt
            continue
        live_time += dt
        u_mean = weights @ atoms
        if float(np.linalg.norm(u_mean - best.control)) <= agreement_tol * (
            1.0 + float(np.linalg.norm(best.control))
        ):
            agree_time += dt

    mass = support_condition_mass(schedule, sys, traj, adjoint)
    return PmpReport(
        hamiltonian_residual=max(0.0, float(residual)),
        hamiltonian_scale=1.0 + float(sup_h),
        support_violation_mass=mass,
        transversality_residual=float(transversality),
        terminal_adjoint_norm=float(terminal_norm),
        nontriviality=adjoint.norm_at_zero(),
        bang_bang_agreement=float(agree_time / live_time) if live_time > 0.0 else 1.0,
        degenerate_time_fraction=float(degenerate_time / total),
        seed_time=float(adjoint.seed_time),
        terminal_decay=decay,
        adjoint=adjoint,
    )


# ---------------------------------------------------------------------------
# maximum-condition fixed point


def _cell_switching_vector(sys, adj, a, b):
    """Integral of B(t)^T psi(t) over [a, b] on the adjoint's own grid."""
    ts = np.asarray(adj.times, dtype=float)
    psis = np.asarray(adj.psis, dtype=float)
    inner = ts[(ts > a) & (ts < b)]
    pts = np.concatenate(([a], inner, [b]))
    vals = [np.atleast_2d(sys.affine.input_matrix(t)).T @ _psi_at(ts, psis, t) for t in pts]
    q = np.zeros(sys.dim_control)
    for k in range(len(pts) - 1):
        q += 0.5 * (pts[k + 1] - pts[k]) * (vals[k] + vals[k + 1])
    return q


def bang_polish(
    sys: ControlSystem,
    tgt: TargetSet,
    schedule: RelaxedSchedule,
    y0,
    rounds: int = 30,
    opts: Optional[IntegratorOptions] = None,
    w_tol: float = 1e-12,
):
    """Refine a certified schedule by iterating the maximum condition.

    Alternates a forward pass, a backward costate sweep seeded in the target's
    normal cone at the exit, and per-cell replacement of the control by the
    argmax of the cell-averaged switching vector B^T psi.  Descent methods
    stall on this last stretch (the hit time is flat in the control to first
    order at the optimum), while the fixed point lands on the extremal of the
    piecewise-constant class directly.  Stops at the first non-improving
    sweep and returns the best (w, schedule, trajectory) seen; None when the
    system is not affine with a ball or box control set, or the input
    schedule fails to produce a certified hit.
    """
    cs = sys.control_set
    if sys.affine is None or not isinstance(cs, (BallSet, BoxSet)):
        return None
    opts = opts or IntegratorOptions()
    n_cells, n_atoms = schedule.weights.shape
    sched = schedule
    best = None
    for _ in range(max(rounds, 1)):
        w_ref = best[0] if best is not None else float(sched.grid[-1])
        t_max = w_ref * 1.2 + 100.0 * opts.hit_tol
        try:
            traj = integrate_forward(sys, sched, y0, tgt=tgt, t_max=t_max, opts=opts)
        except (errors.Error, RuntimeError):
            break
        if traj.hit.status != HIT_TARGET:
            break
        w = float(traj.hit.time)
        improved = best is None or w < best[0] - w_tol * (1.0 + w)
        if best is None or w < best[0]:
            best = (w, sched, traj)
        if not improved:
            break
        t_end = min(w, float(traj.times[-1]))
        y_end = traj.interp(t_end)
        j = int(np.searchsorted(traj.times, t_end)) - 1
        seed_z = normal_cone_seed(
            tgt, _target_coords(sys, y_end), _target_coords(sys, traj.states[max(j, 0)])
        )
        try:
            adj = integrate_adjoint(
                sys, traj, sched, _seed_to_state_coords(sys, y_end, seed_z), t_end=t_end, opts=opts
            )
        except (errors.Error, RuntimeError):
            break
        grid = np.linspace(0.0, w, n_cells + 1)
        atoms = np.array(sched.atoms[:n_cells], dtype=float, copy=True)
        for i in range(n_cells):
            a, b = float(grid[i]), min(float(grid[i + 1]), t_end)
            if b <= a:
                continue
            q = _cell_switching_vector(sys, adj, a, b)
            qn = float(np.linalg.norm(q))
            if isinstance(cs, BallSet):
                if qn <= 1e-14 * (b - a) or cs.radius == 0.0:
                    continue
                u_i = (cs.radius / qn) * q
            else:
                mid = 0.5 * (cs.lower + cs.upper)
                u_i = np.where(q > 0.0, cs.upper, np.where(q < 0.0, cs.lower, mid))
            atoms[i, :, :] = u_i
        sched = RelaxedSchedule(grid=grid, atoms=atoms, weights=np.array(sched.weights, copy=True))
    return best


# ---------------------------------------------------------------------------
# example-specific conclusions


@dataclass
class QuenchingConclusions:
    """Terminal-state sign and adjoint-decay checks for the quenching problem.

    sign_ok records y2(T) >= -tol.  When y2(T) is strictly positive the
    costate must vanish at the quenching time; decay_norms holds
    |psi(T - delta)| on the shrinking family (normalized at t = 0) and
    decay_ok asks every consecutive ratio to drop below the threshold.  A
    terminal y2 at zero makes the decay claim vacuous and it is skipped.
    """

    ok: bool
    y2_terminal: float
    sign_ok: bool
    decay_skipped: bool
    decay_norms: tuple
    decay_ratios: tuple
    decay_ok: bool

    def to_json_dict(self) -> dict:
        return {
            "ok": self.ok,
            "y2_terminal": self.y2_terminal,
            "sign_ok": self.sign_ok,
            "decay_skipped": self.decay_skipped,
            "decay_norms": list(self.decay_norms),
            "decay_ratios": list(self.decay_ratios),
            "decay_ok": self.decay_ok,
        }


def quenching_conclusions(
    triple,
    adjoint: Optional[AdjointTrajectory] = None,
    sys: Optional[ControlSystem] = None,
    tgt: Optional[TargetSet] = None,
    deltas=DEFAULT_DELTAS,
    sign_tol: float = 1e-7,
    decay_ratio: float = 0.7,
    opts: Optional[IntegratorOptions] = None,
) -> QuenchingConclusions:
    """Check the optimal-quenching conclusions on a candidate triple.

    The trajectory should approach the true singular line (tiny or zero
    inflation), since both conclusions concern the singular limit.  When an
    adjoint is supplied its samples near the hit time are reused; otherwise a
    fresh backward sweep is run for every pre-terminal time T - delta * T.
    """
    w, traj, schedule = _unpack_triple(triple)
    sys = sys if sys is not None else getattr(triple, "system", None)
    if sys is None:
        raise ValueError("quenching_conclusions needs the control system (pass sys=...)")
    if sys.kind != "quenching":
        raise errors.NotQuenchingSystem(f"system kind is {sys.kind!r}, not 'quenching'")
    if traj.hit is None or traj.hit.status != HIT_TARGET:
        raise errors.NotHit("conclusions need a trajectory that reaches the singular line")
    tgt = tgt if tgt is not None else getattr(triple, "target", None)
    if tgt is None:
        tgt = sys.singular_set

    t_bar = min(float(traj.hit.time), float(traj.times[-1]))
    y_end = traj.states[-1]
    y2_terminal = float(y_end[1])
    scale = 1.0 + float(np.linalg.norm(y_end))
    sign_ok = y2_terminal >= -sign_tol * scale
    decay_skipped = y2_terminal <= sign_tol * scale

    norms = []
    if not decay_skipped:
        for d in deltas:
            t_end = t_bar * (1.0 - d)
            if adjoint is not None and adjoint.seed_time >= t_end:
                ts = np.asarray(adjoint.times, dtype=float)
                psis = np.asarray(adjoint.psis, dtype=float)
                norms.append(float(np.linalg.norm(_psi_at(ts, psis, t_end))))
                continue
            y_e = traj.interp(t_end)
            j = int(np.searchsorted(traj.times, t_end)) - 1
            seed = normal_cone_seed(tgt, y_e, traj.states[max(j, 0)])
            sweep = integrate_adjoint(sys, traj, schedule, seed, t_end=t_end, opts=opts)
            norms.append(sweep.norm_at_end())
    ratios = tuple(b / a for a, b in zip(norms, norms[1:]) if a > 0.0)
    decay_ok = decay_skipped or (len(ratios) == len(norms) - 1 and all(r < decay_ratio for r in ratios))
    return QuenchingConclusions(
        ok=bool(sign_ok and decay_ok),
        y2_terminal=y2_terminal,
        sign_ok=bool(sign_ok),
        decay_skipped=bool(decay_skipped),
        decay_norms=tuple(norms),
        decay_ratios=ratios,
        decay_ok=bool(decay_ok),
    )
