import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compliant_quad.rotations import expm_so3, orthonormality_error, orthonormalize
from compliant_quad.simcore import (
    ArmParams, BodyParams, Environment, SimulationError, VehicleState, apply_impacts, arm_deflection_angle,
    arm_energy, arm_rotation, contact_wrench, detect_contacts, resolve_collision, rigid_body_accel,
    state_is_valid, step_arm, step_rigid_body,
)

BODY = BodyParams()
ARM = ArmParams()
DT = 1.0 / 500
ZERO = (np.zeros(3), np.zeros(3))

finite = st.floats(-3.0, 3.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)


def hover_state(x=(0.0, 0.0, -0.7)):
    return VehicleState(x=np.array(x, dtype=float))


# --- rigid body ---------------------------------------------------------------


def test_hover_force_balance():
    s = step_rigid_body(hover_state(), BODY.m * BODY.g, np.zeros(3), ZERO, DT, BODY)
    assert np.all(s.v == 0.0)


def test_free_fall_is_gravity_along_e3():
    a = rigid_body_accel(hover_state(), 0.0, BODY, np.zeros(3))
    assert np.array_equal(a, np.array([0.0, 0.0, BODY.g]))


def test_external_force_acceleration():
    a = rigid_body_accel(hover_state(), BODY.m * BODY.g, BODY, np.array([1.0, 0.0, 0.0]))
    # 1 N / 1.12 kg
    assert a == pytest.approx([0.8928571428571428, 0.0, 0.0], abs=1e-12)


def test_hover_fixed_point_drift():
    s = hover_state()
    for _ in range(2000):
        s = step_rigid_body(s, BODY.m * BODY.g, np.zeros(3), ZERO, DT, BODY)
    assert np.linalg.norm(s.v) < 1e-9


@pytest.mark.parametrize("dt", [0.0, -1e-3, 0.02, float("nan")])
def test_dt_out_of_range_rejected(dt):
    with pytest.raises(SimulationError):
        step_rigid_body(hover_state(), 1.0, np.zeros(3), ZERO, dt, BODY)


def test_non_finite_wrench_rejected():
    with pytest.raises(SimulationError):
        step_rigid_body(hover_state(), 1.0, np.zeros(3), (np.array([np.inf, 0, 0]), np.zeros(3)), DT, BODY)


@settings(max_examples=50, deadline=None)
@given(tau=vec3, w0=vec3)
def test_attitude_stays_orthonormal(tau, w0):
    s = VehicleState(R=expm_so3(w0), Omega=0.5 * w0)
    for _ in range(200):
        s = step_rigid_body(s, BODY.m * BODY.g, 0.01 * tau, ZERO, DT, BODY)
    assert orthonormality_error(s.R) < 1e-9
    assert np.linalg.det(s.R) > 0


def test_orthonormalize_repairs_perturbation():
    R = expm_so3(np.array([0.3, -0.2, 1.0])) + 1e-4 * np.arange(9).reshape(3, 3)
    Q = orthonormalize(R)
    assert orthonormality_error(Q) < 1e-12
    assert np.linalg.det(Q) == pytest.approx(1.0, abs=1e-12)


def test_body_params_validation():
    with pytest.raises(SimulationError):
        BodyParams(m=0.0)
    with pytest.raises(SimulationError):
        BodyParams(H=np.diag([0.01, -0.01, 0.02]))


# --- arms -------------------------------------------------------------------------


def test_arm_equilibrium_is_fixed():
    assert step_arm(0.0, 0.0, ARM, 0.0, DT) == (0.0, 0.0)


def test_arm_steady_state_deflection():
    th, thd = 0.0, 0.0
    for _ in range(20000):
        th, thd = step_arm(th, thd, ARM, 1.0 * ARM.l, DT)
    # 1 N at the lever: theta = f l / k
    assert th == pytest.approx(0.113 / 1.307, rel=1e-6)


def test_arm_energy_release_from_rest():
    th, thd = 0.2, 0.0
    E = arm_energy(th, thd, ARM)
    for _ in range(5000):
        th, thd = step_arm(th, thd, ARM, 0.0, DT)
        En = arm_energy(th, thd, ARM)
        assert En <= E + 1e-15
        E = En


@settings(max_examples=200, deadline=None)
@given(th=st.floats(-0.5, 0.5), thd=st.floats(-20, 20))
def test_arm_energy_never_increases(th, thd):
    th = max(-ARM.theta_max, min(ARM.theta_max, th))
    E0 = arm_energy(th, thd, ARM)
    th1, thd1 = step_arm(th, thd, ARM, 0.0, DT)
    assert arm_energy(th1, thd1, ARM) <= E0 * (1 + 1e-12) + 1e-15


@settings(max_examples=200, deadline=None)
@given(tq=st.floats(-5, 5), thd=st.floats(-50, 50))
def test_arm_hard_stop(tq, thd):
    th, thd1 = step_arm(0.5 * ARM.theta_max, thd, ARM, tq, DT)
    assert abs(th) <= ARM.theta_max
    if abs(th) == ARM.theta_max:
        assert thd1 == 0.0


def test_arm_params_limit():
    with pytest.raises(SimulationError):
        ArmParams(theta_max=math.radians(31.0))


@pytest.mark.parametrize("i,theta,expected", [
    (1, 0.0, math.pi / 4),
    (2, 0.0, -math.pi / 4),
    (3, 0.0, math.pi / 4),
    (4, 0.1, -math.pi / 4 + 0.1),
])
def test_arm_deflection_angle(i, theta, expected):
    assert arm_deflection_angle(i, theta) == pytest.approx(expected, abs=1e-15)


def test_arm_deflection_index_checked():
    with pytest.raises(SimulationError):
        arm_deflection_angle(0, 0.0)


def test_arm_rotation():
    assert np.allclose(arm_rotation(0.0), np.eye(3))
    assert np.allclose(arm_rotation(math.pi / 2) @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])


# --- collisions -------------------------------------------------------------------


def test_restitution_head_on():
    v = resolve_collision(np.array([2.0, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0]), 0.09, 0.0)
    assert v == pytest.approx([-0.18, 0.0, 0.0], abs=1e-15)


def test_plastic_impact_zeroes_normal():
    v = resolve_collision(np.array([1.0, 0.5, 0.0]), np.array([-1.0, 0.0, 0.0]), 0.0)
    assert v[0] == 0.0 and v[1] == 0.5


def test_angled_impact_speed():
    v = resolve_collision(np.array([1.0, 1.0, 0.0]) / math.sqrt(2), np.array([-1.0, 0.0, 0.0]), 0.09, 0.5)
    assert np.linalg.norm(v) == pytest.approx(math.hypot(0.09 / math.sqrt(2), 0.5 / math.sqrt(2)), rel=1e-12)
    assert np.linalg.norm(v) == pytest.approx(0.36, abs=0.01)


def test_receding_velocity_unchanged():
    v = np.array([-1.0, 0.2, 0.0])
    assert np.array_equal(resolve_collision(v, np.array([-1.0, 0.0, 0.0]), 0.09), v)


@settings(max_examples=300, deadline=None)
@given(v=vec3, ang=st.floats(0, 2 * math.pi), e=st.floats(0, 0.99))
def test_restitution_jump_law(v, ang, e):
    n = np.array([math.cos(ang), math.sin(ang), 0.0])
    vn = float(v @ n)
    out = resolve_collision(v, n, e, 0.5)
    if vn < 0:
        assert abs(out @ n) == pytest.approx(e * abs(vn), rel=1e-9, abs=1e-12)
    else:
        assert np.array_equal(out, v)


# --- contact geometry -------------------------------------------------------------

WALL = [[(1.0, -2.0), (1.3, -2.0), (1.3, 2.0), (1.0, 2.0)]]


def test_no_contact_far_from_wall():
    env = Environment(obstacles=WALL)
    assert detect_contacts(hover_state((0.0, 0.0, -0.7)), env, BODY) == []


def test_penalty_force_static():
    env = Environment(obstacles=WALL, wall_stiffness=500.0)
    # front guards sit at x + 0.21 along the body x axis; penetrate by 1 cm
    s = hover_state((1.0 - BODY.footprint_radius + 0.01, 0.0, -0.7))
    ev = detect_contacts(s, env, BODY)
    assert len(ev) == 2
    for e in ev:
        assert e.penetration == pytest.approx(0.01, abs=1e-9)
        assert e.normal_force == pytest.approx(5.0, abs=1e-6)
        assert np.linalg.norm(e.normal) == pytest.approx(1.0, abs=1e-9)
        assert e.normal == pytest.approx([-1.0, 0.0, 0.0])
        assert not e.impulsive


def test_fast_approach_is_impulsive():
    env = Environment(obstacles=WALL)
    s = hover_state((1.0 - BODY.footprint_radius + 0.001, 0.0, -0.7))
    s.v = np.array([2.0, 0.0, 0.0])
    ev = detect_contacts(s, env, BODY)
    assert ev and all(e.impulsive for e in ev)
    out, n = apply_impacts(s, ev, env, BODY, ARM)
    assert n == len(ev)
    assert out.v[0] == pytest.approx(-0.09 * 2.0)
    assert np.array_equal(out.x, s.x)


def test_contact_wrench_pushes_away():
    env = Environment(obstacles=WALL)
    s = hover_state((1.0 - BODY.footprint_radius + 0.002, 0.0, -0.7))
    F, tau, loads = contact_wrench(s, detect_contacts(s, env, BODY), env, BODY)
    assert F[0] < 0 and abs(F[1]) < 1e-12
    assert abs(tau[2]) < 1e-12
    # both front arms carry 1.6 N of wall force, lumped normal to arms at 45 deg
    assert loads[0] == 0.0 and loads[3] == 0.0
    assert abs(loads[1]) == pytest.approx(1.6 * math.sqrt(2), rel=1e-9)
    assert loads[1] == pytest.approx(loads[2], rel=1e-12)


def test_degenerate_polygon_rejected():
    with pytest.raises(SimulationError):
        Environment(obstacles=[[(0, 0), (0, 0), (1, 1)]])


def test_state_validity():
    s = hover_state()
    assert state_is_valid(s, ARM)
    s.theta[0] = 1.0
    assert not state_is_valid(s, ARM)
