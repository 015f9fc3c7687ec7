"""Controlled ODE systems whose fields blow up on a singular set.

Jacobian convention (used everywhere in this package): jacobians of vector
fields are stored in gradient layout, entry (i, j) = d f_j / d y_i, i.e. the
transpose of the usual layout.  With this choice the costate equation reads

    psi'(t) = -jacobian(t, y, u) @ psi(t)

with no transpose.  Consequence for checks: jacobian(t, y, u).T must match
finite differences of field in y.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace
from typing import Callable, Optional, Union

import numpy as np

from . import errors
from .target import Hyperplane, TargetSet

# Distance to the singular set below which field evaluation refuses to proceed.
SINGULAR_GUARD = 1e-12


def _vec(x):
    return np.asarray(x, dtype=float)


# ---------------------------------------------------------------------------
# control sets


@dataclass(frozen=True, eq=False)
class BallSet:
    """Centered closed ball {u : |u| <= radius}."""

    radius: float
    dim: int

    is_convex = True

    def contains(self, u, tol: float = 1e-9) -> bool:
        return float(np.linalg.norm(_vec(u))) <= self.radius * (1.0 + tol) + tol

    def project(self, u):
        u = _vec(u)
        r = float(np.linalg.norm(u))
        if r <= self.radius:
            return u.copy()
        return (self.radius / r) * u

    def boundary_sample(self, rng):
        v = rng.standard_normal(self.dim)
        n = float(np.linalg.norm(v))
        if n == 0.0:
            v = np.zeros(self.dim)
            v[0] = 1.0
            n = 1.0
        return (self.radius / n) * v

    @property
    def span(self) -> float:
        return 2.0 * self.radius


@dataclass(frozen=True, eq=False)
class BoxSet:
    """Axis-aligned box {u : lower <= u <= upper} (componentwise)."""

    lower: np.ndarray
    upper: np.ndarray

    is_convex = True

    def __post_init__(self):
        lo, hi = _vec(self.lower), _vec(self.upper)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("invalid box bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, u, tol: float = 1e-9) -> bool:
        u = _vec(u)
        width = np.maximum(self.upper - self.lower, 1.0)
        return bool(
            np.all(u >= self.lower - tol * width) and np.all(u <= self.upper + tol * width)
        )

    def project(self, u):
        return np.clip(_vec(u), self.lower, self.upper)

    def boundary_sample(self, rng):
        # A random vertex; vertices are the extreme points relevant to bang-bang seeds.
        pick = rng.integers(0, 2, size=self.dim).astype(bool)
        return np.where(pick, self.upper, self.lower).astype(float)

    @property
    def span(self) -> float:
        return float(np.max(self.upper - self.lower))


@dataclass(frozen=True, eq=False)
class FiniteSet:
    """Finite control set given by its list of points (rows)."""

    points: np.ndarray

    is_convex = False

    def __post_init__(self):
        pts = np.atleast_2d(_vec(self.points))
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def contains(self, u, tol: float = 1e-9) -> bool:
        u = _vec(u)
        return bool(np.any(np.linalg.norm(self.points - u, axis=1) <= tol))

    def project(self, u):
        u = _vec(u)
        i = int(np.argmin(np.linalg.norm(self.points - u, axis=1)))
        return self.points[i].copy()

    def boundary_sample(self, rng):
        return self.points[int(rng.integers(0, len(self.points)))].copy()

    @property
    def span(self) -> float:
        if len(self.points) < 2:
            return 1.0
        return float(
            max(
                np.linalg.norm(a - b)
                for i, a in enumerate(self.points)
                for b in self.points[i + 1 :]
            )
        )


ControlSet = Union[BallSet, BoxSet, FiniteSet]


# ---------------------------------------------------------------------------
# piecewise-constant signals (input matrices, drift and damping profiles)


class PiecewiseConstant:
    """Left-continuous piecewise-constant signal on [starts[0], inf).

    values[k] applies on (starts[k], starts[k+1]]; evaluation clamps outside
    the sampled range, so the signal extends constantly in both directions.
    """

    def __init__(self, starts, values):
        self.starts = _vec(starts)
        self.values = np.asarray(values, dtype=float)
        if self.starts.ndim != 1 or len(self.starts) != len(self.values):
            raise ValueError("starts and values must have equal length")
        if len(self.starts) > 1 and np.any(np.diff(self.starts) <= 0.0):
            raise ValueError("starts must be strictly increasing")

    @classmethod
    def constant(cls, value):
        return cls([0.0], [value])

    def __call__(self, t: float):
        i = int(np.searchsorted(self.starts, t, side="left")) - 1
        i = min(max(i, 0), len(self.values) - 1)
        return self.values[i]

    @property
    def knots(self):
        return tuple(float(t) for t in self.starts[1:])


@dataclass(frozen=True, eq=False)
class AffineStructure:
    """Decomposition field(t, y, u) = drift(t, y) + input_matrix(t) @ u."""

    drift: Callable[[float, np.ndarray], np.ndarray]
    input_matrix: Callable[[float], np.ndarray]
    knots: tuple = ()


# ---------------------------------------------------------------------------
# compactification chart for fields that blow up in finite time


@dataclass(frozen=True, eq=False)
class Compactification:
    """Chart z = G(y) = |y|^(-gamma-1) y mapping a neighborhood of infinity to 0.

    |z| = |y|^(-gamma), so finite-time blowup of y becomes a finite hit of
    z = 0.  The chart is used outside radius r1 with a hysteresis band: the
    integrator switches in at |y| >= 2 r1 and back out at |y| <= r1.  When r1
    is None it defaults at integration time to 10 * max(base_radius, |y0|).
    """

    gamma: float
    base_radius: float = 1.0
    r1: Optional[float] = None

    def effective_r1(self, y0_norm: float) -> float:
        if self.r1 is not None:
            return float(self.r1)
        return 10.0 * max(self.base_radius, float(y0_norm))

    def to_chart(self, y):
        y = _vec(y)
        r = float(np.linalg.norm(y))
        if r <= 0.0:
            raise errors.InnerRegion("chart map undefined at the origin")
        return r ** (-self.gamma - 1.0) * y

    def from_chart(self, z):
        z = _vec(z)
        s = float(np.linalg.norm(z))
        if s <= 0.0:
            raise errors.InnerRegion("inverse chart map undefined at z = 0")
        return s ** (-(self.gamma + 1.0) / self.gamma) * z

    def gradient_jacobian(self, y):
        """Jacobian of G at y in gradient layout (symmetric for this chart)."""
        y = _vec(y)
        r = float(np.linalg.norm(y))
        if r <= 0.0:
            raise errors.InnerRegion("chart jacobian undefined at the origin")
        yhat = y / r
        return r ** (-self.gamma - 1.0) * (
            np.eye(y.size) - (self.gamma + 1.0) * np.outer(yhat, yhat)
        )

    def push_velocity(self, y, v):
        """dz/dt given y and dy/dt (the chart jacobian applied to v)."""
        y = _vec(y)
        v = _vec(v)
        r = float(np.linalg.norm(y))
        yhat = y / r
        return r ** (-self.gamma - 1.0) * (v - (self.gamma + 1.0) * yhat * float(yhat @ v))

    def pull_velocity(self, z, w):
        """dy/dt given z and dz/dt (inverse chart jacobian applied to w)."""
        y = self.from_chart(z)
        r = float(np.linalg.norm(y))
        yhat = y / r
        # Inverse of r^(-g-1) (I - (g+1) yhat yhat^T): eigenvalues 1 and -gamma.
        w = _vec(w)
        return r ** (self.gamma + 1.0) * (
            w - (self.gamma + 1.0) / self.gamma * yhat * float(yhat @ w)
        )


# ---------------------------------------------------------------------------
# control systems


@dataclass(frozen=True, eq=False)
class ControlSystem:
    """Controlled ODE y' = field(t, y, u), possibly singular on a target-like set.

    jacobian is in gradient layout (see module docstring).  control_jacobian
    is in standard layout, entry (i, j) = d field_i / d u_j; when None it is
    approximated by central differences where needed.
    """

    name: str
    kind: str
    dim_state: int
    dim_control: int
    field: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    jacobian: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    control_set: ControlSet
    singular_set: Optional[TargetSet] = None
    affine: Optional[AffineStructure] = None
    chart: Optional[Compactification] = None
    control_jacobian: Optional[Callable[[float, np.ndarray, np.ndarray], np.ndarray]] = None
    time_knots: tuple = ()

    def guard(self, y) -> None:
        """Raise SingularState when y is numerically on the singular set."""
        if self.singular_set is not None and self.singular_set.distance(y) < SINGULAR_GUARD:
            raise errors.SingularState(f"state within {SINGULAR_GUARD:.0e} of the singular set")


def eval_field(sys: ControlSystem, t: float, y, u) -> np.ndarray:
    """Evaluate the field with the singular-set guard and control validation."""
    y = _vec(y)
    u = _vec(u)
    if not sys.control_set.contains(u, tol=1e-7):
        raise ValueError("control value outside the control set")
    sys.guard(y)
    out = _vec(sys.field(t, y, u))
    if not np.all(np.isfinite(out)):
        raise errors.SingularState("field evaluated to a non-finite value")
    return out


def eval_jacobian(sys: ControlSystem, t: float, y, u) -> np.ndarray:
    """Evaluate the gradient-layout state jacobian with the singular-set guard."""
    y = _vec(y)
    sys.guard(y)
    out = np.asarray(sys.jacobian(t, y, _vec(u)), dtype=float)
    if not np.all(np.isfinite(out)):
        raise errors.SingularState("jacobian evaluated to a non-finite value")
    return out


def control_jacobian(sys: ControlSystem, t: float, y, u, eps: float = 1e-6) -> np.ndarray:
    """Standard-layout d field / d u, analytic when available else central differences."""
    y = _vec(y)
    u = _vec(u)
    if sys.control_jacobian is not None:
        return np.asarray(sys.control_jacobian(t, y, u), dtype=float)
    cols = []
    for j in range(u.size):
        du = np.zeros_like(u)
        du[j] = eps
        cols.append((sys.field(t, y, u + du) - sys.field(t, y, u - du)) / (2.0 * eps))
    return np.column_stack(cols)


def _input_matrix(B, n, m):
    if B is None:
        return PiecewiseConstant.constant(np.eye(n, m))
    if isinstance(B, PiecewiseConstant):
        return B
    return PiecewiseConstant.constant(np.asarray(B, dtype=float).reshape(n, m))


def _affine_system(
    name, kind, n, m, drift, drift_jacobian, Bsig, control_set, singular_set=None, chart=None
):
    def field(t, y, u):
        return drift(t, y) + Bsig(t) @ u

    def jac(t, y, u):
        return drift_jacobian(t, y)

    def cjac(t, y, u):
        return Bsig(t)

    return ControlSystem(
        name=name,
        kind=kind,
        dim_state=n,
        dim_control=m,
        field=field,
        jacobian=jac,
        control_set=control_set,
        singular_set=singular_set,
        affine=AffineStructure(drift=drift, input_matrix=Bsig, knots=Bsig.knots),
        chart=chart,
        control_jacobian=cjac,
        time_knots=Bsig.knots,
    )


def make_quenching_system(B=None, rho0: float = 1.0) -> ControlSystem:
    """Planar system y1' = y2/(1 - y1) + (Bu)_1, y2' = y1 + y2 + (Bu)_2.

    The field is singular on the line y1 = 1, which is also the target of the
    associated time-optimal problem; |u| <= rho0.
    """
    Bsig = _input_matrix(B, 2, 2)

    def drift(t, y):
        return np.array([y[1] / (1.0 - y[0]), y[0] + y[1]])

    def drift_jac(t, y):
        one = 1.0 - y[0]
        return np.array([[y[1] / one**2, 1.0], [1.0 / one, 1.0]])

    return _affine_system(
        name="quenching-ex1",
        kind="quenching",
        n=2,
        m=2,
        drift=drift,
        drift_jacobian=drift_jac,
        Bsig=Bsig,
        control_set=BallSet(radius=float(rho0), dim=2),
        singular_set=Hyperplane(axis=0, level=1.0),
    )


def make_blowup_system(
    n: int = 1,
    p: float = 2.0,
    B=None,
    rho0: float = 1.0,
    gamma: Optional[float] = None,
    r1: Optional[float] = None,
) -> ControlSystem:
    """Superlinear system y' = |y|^(p-1) y + B(t) u with finite-time blowup.

    gamma defaults to p; gamma = p - 1 is admitted as the boundary case (it
    makes the chart dynamics cross z = 0 transversally, exactly linear for
    the scalar p = 2 chart z = 1/y).
    """
    if p <= 1.0:
        raise ValueError("blowup exponent p must exceed 1")
    gamma = float(p if gamma is None else gamma)
    if gamma < p - 1.0:
        raise ValueError("chart exponent gamma must be >= p - 1")
    if B is None:
        m = n
    elif isinstance(B, PiecewiseConstant):
        m = int(np.asarray(B.values[0]).shape[-1])
    else:
        B = np.asarray(B, dtype=float).reshape(n, -1)
        m = B.shape[1]
    Bsig = _input_matrix(B, n, m)

    def drift(t, y):
        r = float(np.linalg.norm(y))
        return r ** (p - 1.0) * y if r > 0.0 else np.zeros_like(y)

    def drift_jac(t, y):
        r = float(np.linalg.norm(y))
        if r == 0.0:
            return np.zeros((n, n))
        yhat = y / r
        return r ** (p - 1.0) * (np.eye(n) + (p - 1.0) * np.outer(yhat, yhat))

    M = input_bound(Bsig, BallSet(radius=float(rho0), dim=m))
    chart = Compactification(gamma=gamma, base_radius=(p + M) / (p - 1.0), r1=r1)
    return _affine_system(
        name="blowup-ex2",
        kind="blowup",
        n=n,
        m=m,
        drift=drift,
        drift_jacobian=drift_jac,
        Bsig=Bsig,
        control_set=BallSet(radius=float(rho0), dim=m),
        chart=chart,
    )


def input_bound(Bsig: PiecewiseConstant, control_set) -> float:
    """sup_t sup_{u in U} |B(t) u| over the sampled input matrices."""
    bound = 0.0
    for Bk in np.atleast_3d(Bsig.values):
        if isinstance(control_set, BallSet):
            bound = max(bound, control_set.radius * float(np.linalg.norm(Bk, 2)))
        elif isinstance(control_set, BoxSet):
            lo, hi = control_set.lower, control_set.upper
            for mask in range(2 ** control_set.dim):
                vert = np.where([(mask >> j) & 1 for j in range(control_set.dim)], hi, lo)
                bound = max(bound, float(np.linalg.norm(Bk @ vert)))
        else:
            for ptn in control_set.points:
                bound = max(bound, float(np.linalg.norm(Bk @ ptn)))
    return bound


def make_integrator_system(n: int = 1, control_set: Optional[ControlSet] = None) -> ControlSystem:
    """Toy system y' = u, smooth everywhere; the default control set is [-1, 1]^n."""
    if control_set is None:
        control_set = BoxSet(lower=-np.ones(n), upper=np.ones(n))
    Bsig = PiecewiseConstant.constant(np.eye(n))

    def drift(t, y):
        return np.zeros(n)

    def drift_jac(t, y):
        return np.zeros((n, n))

    return _affine_system(
        name="toy-integrator",
        kind="toy",
        n=n,
        m=n,
        drift=drift,
        drift_jacobian=drift_jac,
        Bsig=Bsig,
        control_set=control_set,
    )


# ---------------------------------------------------------------------------
# quenching desingularization transform


def transform_quenching(y) -> np.ndarray:
    """Map y = (y1, y2) to x = ((1 - y1)^2, y2), flattening the singular line."""
    y = _vec(y)
    return np.array([(1.0 - y[0]) ** 2, y[1]])


def inverse_transform_quenching(x) -> np.ndarray:
    """Inverse of transform_quenching on the branch y1 < 1."""
    x = _vec(x)
    if x[0] < 0.0:
        raise errors.NegativeTransformCoordinate("first transformed coordinate is negative")
    return np.array([1.0 - np.sqrt(x[0]), x[1]])


def quenching_transformed_system(B=None, rho0: float = 1.0) -> ControlSystem:
    """The quenching dynamics rewritten in the transformed coordinates.

    x1' = -2 x2 - 2 sqrt(x1) (Bu)_1, x2' = 1 - sqrt(x1) + x2 + (Bu)_2; the
    field is continuous up to the flattened target {x1 = 0}.  Not affine in
    the sense tracked here because the input matrix depends on the state.
    """
    Bsig = _input_matrix(B, 2, 2)

    def field(t, x, u):
        bu = Bsig(t) @ u
        s = np.sqrt(max(x[0], 0.0))
        return np.array([-2.0 * x[1] - 2.0 * s * bu[0], 1.0 - s + x[1] + bu[1]])

    def jac(t, x, u):
        bu = Bsig(t) @ u
        s = np.sqrt(max(x[0], 0.0))
        if s == 0.0:
            raise errors.SingularJacobian("transformed jacobian undefined at x1 = 0")
        return np.array([[-bu[0] / s, -0.5 / s], [-2.0, 1.0]])

    def cjac(t, x, u):
        s = np.sqrt(max(x[0], 0.0))
        return np.diag([-2.0 * s, 1.0]) @ Bsig(t)

    return ControlSystem(
        name="quenching-ex1-transformed",
        kind="custom",
        dim_state=2,
        dim_control=2,
        field=field,
        jacobian=jac,
        control_set=BallSet(radius=float(rho0), dim=2),
        control_jacobian=cjac,
        time_knots=Bsig.knots,
    )


# ---------------------------------------------------------------------------
# penalized auxiliary fields used to test strict optimality of a candidate


def make_penalized_system(sys: ControlSystem, candidate, variant: str) -> ControlSystem:
    """Auxiliary field penalizing deviation from a candidate control.

    variant "quench": subtract (|u - ubar(t)|^2, 0, ...) from the field.
    variant "blowup": subtract |u - ubar(t)|^2 / (4 rho0^2) * y.
    candidate must provide value_at(t) (a classical schedule).
    """
    if variant not in ("quench", "blowup"):
        raise ValueError("variant must be 'quench' or 'blowup'")
    if variant == "blowup" and not isinstance(sys.control_set, BallSet):
        raise errors.UnsupportedControlSet("blowup penalty is normalized by a ball radius")

    knots = tuple(sorted(set(sys.time_knots) | set(candidate.knots)))

    if variant == "quench":

        def field(t, y, u):
            dev = u - candidate.value_at(t)
            out = _vec(sys.field(t, y, u)).copy()
            out[0] -= float(dev @ dev)
            return out

        jac = sys.jacobian

        def cjac(t, y, u):
            fu = control_jacobian(sys, t, y, u).copy()
            fu[0, :] -= 2.0 * (u - candidate.value_at(t))
            return fu

    else:
        coeff = 1.0 / (4.0 * sys.control_set.radius**2)

        def field(t, y, u):
            dev = u - candidate.value_at(t)
            return _vec(sys.field(t, y, u)) - coeff * float(dev @ dev) * y

        def jac(t, y, u):
            dev = u - candidate.value_at(t)
            return np.asarray(sys.jacobian(t, y, u), dtype=float) - coeff * float(
                dev @ dev
            ) * np.eye(sys.dim_state)

        def cjac(t, y, u):
            dev = u - candidate.value_at(t)
            return control_jacobian(sys, t, y, u) - 2.0 * coeff * np.outer(y, dev)

    return ControlSystem(
        name=sys.name + "-penalized",
        kind=sys.kind + "-penalized",
        dim_state=sys.dim_state,
        dim_control=sys.dim_control,
        field=field,
        jacobian=jac,
        control_set=sys.control_set,
        singular_set=sys.singular_set,
        affine=None,
        chart=sys.chart,
        control_jacobian=cjac,
        time_knots=knots,
    )


def time_scaled(sys: ControlSystem, w: float) -> ControlSystem:
    """System in rescaled time s = t / w: z(s) = y(w s) satisfies z' = w f(w s, z, u)."""
    if w <= 0.0:
        raise ValueError("time scale w must be positive")

    def field(s, y, u):
        return w * sys.field(w * s, y, u)

    def jac(s, y, u):
        return w * np.asarray(sys.jacobian(w * s, y, u), dtype=float)

    cjac = None
    if sys.control_jacobian is not None:

        def cjac(s, y, u):
            return w * np.asarray(sys.control_jacobian(w * s, y, u), dtype=float)

    affine = None
    if sys.affine is not None:
        base = sys.affine
        affine = AffineStructure(
            drift=lambda s, y: w * base.drift(w * s, y),
            input_matrix=lambda s: w * base.input_matrix(w * s),
            knots=tuple(k / w for k in base.knots),
        )

    return replace(
        sys,
        name=sys.name + "-unit-time",
        field=field,
        jacobian=jac,
        affine=affine,
        control_jacobian=cjac,
        time_knots=tuple(k / w for k in sys.time_knots),
    )
