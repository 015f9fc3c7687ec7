import numpy as np
import pytest
from hypothesis import given, strategies as st

from relaxtoc import errors
from relaxtoc.dynamics import (
    BallSet,
    BoxSet,
    Compactification,
    FiniteSet,
    PiecewiseConstant,
    control_jacobian,
    eval_field,
    eval_jacobian,
    input_bound,
    inverse_transform_quenching,
    make_blowup_system,
    make_integrator_system,
    make_penalized_system,
    make_quenching_system,
    quenching_transformed_system,
    transform_quenching,
)
from relaxtoc.integrate import IntegratorOptions, integrate_forward
from relaxtoc.relaxed import ClassicalSchedule


def _fd_jacobian(sys, t, y, u, h=1e-6):
    n = y.size
    out = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h * max(1.0, abs(y[j]))
        out[:, j] = (eval_field(sys, t, y + e, u) - eval_field(sys, t, y - e, u)) / (2.0 * e[j])
    return out


def _sample_point(kind, rng):
    if kind == "quenching":
        # keep clear of the singular line y1 = 1
        y = rng.normal(scale=1.5, size=2)
        y[0] = min(y[0], 0.8) if y[0] < 1.0 else max(y[0], 1.2)
        return y
    y = rng.normal(scale=2.0, size=1)
    while abs(y[0]) < 0.1:
        y = rng.normal(scale=2.0, size=1)
    return y


def test_jacobian_matches_finite_differences(quench_sys, blowup_sys_g1, rng):
    # eval_jacobian uses the gradient layout (i, j) -> df^j / dy_i, so its
    # transpose is the conventional Jacobian the differences produce
    for sys in (quench_sys, blowup_sys_g1, make_integrator_system(2)):
        for _ in range(200):
            y = _sample_point(sys.kind, rng)[: sys.dim_state]
            if y.size != sys.dim_state:
                y = rng.normal(size=sys.dim_state)
            u = sys.control_set.boundary_sample(rng)
            t = rng.uniform(0.0, 1.0)
            J = eval_jacobian(sys, t, y, u).T
            J_fd = _fd_jacobian(sys, t, y, u)
            scale = 1.0 + np.abs(J_fd).max()
            assert np.abs(J - J_fd).max() <= 1e-5 * scale


def test_affine_decomposition_exact(quench_sys, blowup_sys_g1, rng):
    for sys in (quench_sys, blowup_sys_g1):
        for _ in range(50):
            y = _sample_point(sys.kind, rng)[: sys.dim_state]
            u = sys.control_set.boundary_sample(rng)
            t = rng.uniform(0.0, 2.0)
            f0 = eval_field(sys, t, y, np.zeros(sys.dim_control))
            lhs = eval_field(sys, t, y, u) - f0
            rhs = sys.affine.input_matrix(t) @ u
            # exact up to the one rounding of drift + Bu
            scale = 1.0 + np.abs(f0).max() + np.abs(rhs).max()
            assert np.abs(lhs - rhs).max() <= 4.0 * np.finfo(float).eps * scale


def test_control_jacobian_is_input_matrix(quench_sys, rng):
    for _ in range(20):
        y = _sample_point("quenching", rng)
        u = quench_sys.control_set.boundary_sample(rng)
        B = control_jacobian(quench_sys, 0.3, y, u)
        assert np.allclose(B, quench_sys.affine.input_matrix(0.3), atol=0.0)


def test_singular_guard_raises(quench_sys):
    with pytest.raises(errors.SingularState):
        eval_field(quench_sys, 0.0, np.array([1.0 - 1e-13, 0.5]), np.zeros(2))


def test_field_rejects_control_outside_set(quench_sys):
    with pytest.raises(ValueError):
        eval_field(quench_sys, 0.0, np.array([0.0, 0.5]), np.array([5.0, 0.0]))


def test_transform_conjugacy(quench_sys):
    # integrate the transformed field in x, map back, compare to the direct
    # run; valid while the direct run stays >= 0.05 from the singular line
    tsys = quenching_transformed_system()
    y0 = np.array([0.0, 0.5])
    control = ClassicalSchedule(
        grid=np.array([0.0, 0.1, 0.25]),
        values=np.array([[0.4, -0.2], [-0.3, 0.5]]),
    )
    # small max_step keeps the dense-output error of the sample-time
    # comparison far below the bound being asserted
    opts = IntegratorOptions(rtol=1e-10, atol=1e-12, max_step=0.005)
    direct = integrate_forward(quench_sys, control, y0, tgt=None, t_max=0.25, opts=opts)
    assert direct.states[:, 0].max() < 0.95
    lifted = integrate_forward(
        tsys, control, transform_quenching(y0), tgt=None, t_max=0.25, opts=opts
    )
    gap = 0.0
    for t, y in zip(direct.times, direct.states):
        x = lifted.interp(min(t, lifted.times[-1]))
        gap = max(gap, float(np.linalg.norm(inverse_transform_quenching(x) - y)))
    assert gap <= 1e-6


def test_transform_round_trip(rng):
    for _ in range(100):
        y = rng.normal(size=2)
        y[0] = min(y[0], 0.999)
        x = transform_quenching(y)
        assert x[0] >= 0.0
        assert np.allclose(inverse_transform_quenching(x), y, atol=1e-12)
    with pytest.raises(errors.NegativeTransformCoordinate):
        inverse_transform_quenching(np.array([-1e-9, 0.0]))


def test_penalized_field_coincides_on_candidate(quench_sys, blowup_sys_g1, rng):
    candidate = ClassicalSchedule(
        grid=np.array([0.0, 0.5, 1.0]),
        values=np.array([[0.3, 0.1], [-0.2, 0.4]]),
    )
    pen_q = make_penalized_system(quench_sys, candidate, "quench")
    cand1 = ClassicalSchedule(grid=np.array([0.0, 1.0]), values=np.array([[0.6]]))
    pen_b = make_penalized_system(blowup_sys_g1, cand1, "blowup")
    for _ in range(30):
        t = rng.uniform(0.0, 1.0)
        y2 = _sample_point("quenching", rng)
        u = candidate.value_at(t)
        assert np.array_equal(eval_field(pen_q, t, y2, u), eval_field(quench_sys, t, y2, u))
        y1 = _sample_point("blowup", rng)
        u1 = cand1.value_at(t)
        assert np.array_equal(eval_field(pen_b, t, y1, u1), eval_field(blowup_sys_g1, t, y1, u1))
        # off the candidate the penalty bites
        off = u + np.array([0.2, 0.0])
        assert eval_field(pen_q, t, y2, off)[0] < eval_field(quench_sys, t, y2, off)[0]


def test_piecewise_constant_left_continuous_eval():
    sig = PiecewiseConstant(np.array([0.0, 1.0, 2.0]), np.array([10.0, 20.0, 30.0]))
    assert sig(0.5) == 10.0
    assert sig(1.0) == 10.0  # left-continuous: the knot keeps the older value
    assert sig(1.0 + 1e-12) == 20.0
    assert sig(5.0) == 30.0
    assert sig(-1.0) == 10.0
    # knots are the interior switch instants the integrator must land on
    assert sig.knots == (1.0, 2.0)


@given(st.floats(0.1, 5.0), st.integers(1, 4))
def test_ball_boundary_sample_on_sphere(radius, dim):
    ball = BallSet(radius=radius, dim=dim)
    rng = np.random.default_rng(7)
    for _ in range(20):
        u = ball.boundary_sample(rng)
        assert abs(np.linalg.norm(u) - radius) <= 1e-9 * (1.0 + radius)
        assert ball.contains(u)


def test_box_and_finite_sets(rng):
    box = BoxSet(lower=np.array([-1.0, 0.0]), upper=np.array([1.0, 2.0]))
    assert box.is_convex
    assert box.contains(np.array([0.0, 1.0]))
    assert not box.contains(np.array([0.0, 2.1]))
    assert np.allclose(box.project(np.array([4.0, -3.0])), [1.0, 0.0])
    for _ in range(20):
        v = box.boundary_sample(rng)
        assert box.contains(v)
    fin = FiniteSet(points=np.array([[0.0], [1.0]]))
    assert not fin.is_convex
    assert fin.contains(np.array([1.0]))
    assert not fin.contains(np.array([0.5]))


def test_input_bound_ball_and_box():
    B = PiecewiseConstant.constant(np.array([[3.0, 0.0], [0.0, 4.0]]))
    ball = BallSet(radius=2.0, dim=2)
    assert abs(input_bound(B, ball) - 8.0) <= 1e-12  # 2 * sigma_max
    box = BoxSet(lower=-np.ones(2), upper=np.ones(2))
    assert abs(input_bound(B, box) - 5.0) <= 1e-12  # |(3, 4)|


def test_compactification_round_trip_and_jacobian(rng):
    chart = Compactification(gamma=2.0, base_radius=2.0, r1=5.0)
    for _ in range(100):
        y = rng.normal(scale=8.0, size=3)
        if np.linalg.norm(y) < 0.5:
            continue
        z = chart.to_chart(y)
        assert np.allclose(chart.from_chart(z), y, rtol=1e-10, atol=1e-12)
        # gradient layout: (i, j) -> dG^j / dy_i; symmetric for radial maps
        J = chart.gradient_jacobian(y)
        assert np.allclose(J, J.T, atol=1e-12)
        h = 1e-6 * (1.0 + np.abs(y))
        for i in range(3):
            e = np.zeros(3)
            e[i] = h[i]
            col = (chart.to_chart(y + e) - chart.to_chart(y - e)) / (2.0 * h[i])
            assert np.abs(J[i] - col).max() <= 1e-5 * (1.0 + np.abs(col).max())
        # velocity push/pull are mutually inverse
        v = rng.normal(size=3)
        assert np.allclose(chart.pull_velocity(z, chart.push_velocity(y, v)), v, rtol=1e-9, atol=1e-12)


def test_blowup_gamma_guard():
    with pytest.raises(ValueError):
        make_blowup_system(n=1, p=2.0, gamma=0.5)
    make_blowup_system(n=1, p=2.0, gamma=1.0)  # boundary case admitted


def test_quenching_singular_set_is_target_line(quench_sys):
    assert quench_sys.singular_set is not None
    assert quench_sys.singular_set.base_distance(np.array([1.0, 7.0])) == 0.0
