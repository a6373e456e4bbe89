"""Fixed-step dynamics of a quadrotor with four spring-loaded arms in a 2-D world.

The body obeys Newton-Euler with a z-down inertial frame, each arm is a
torsional mass-spring-damper with a hard stop, and obstacles are closed
polygons extruded vertically. Contacts use a penalty normal force with
Coulomb friction; fast approaches additionally get a restitution jump.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .rotations import E3, expm_so3, hat, orthonormalize, rot_z

CENTER = -1
DT_MAX = 0.01

# Arm frame constants, arm i = 1..4 at index i - 1.
ARM_NU = (-math.pi / 2, -math.pi / 2, math.pi / 2, math.pi / 2)
ARM_MU = (3 * math.pi / 4, math.pi / 4, -math.pi / 4, -3 * math.pi / 4)


class SimulationError(ValueError):
    """Raised for rejected inputs (non-finite values, bad step sizes, bad geometry)."""


@dataclass
class BodyParams:
    m: float = 1.12
    H: np.ndarray = field(default_factory=lambda: np.diag([0.01, 0.01, 0.02]))
    g: float = 9.81
    arm_radius: float = 0.15
    footprint_radius: float = 0.21
    v_limit: float = 4.0

    def __post_init__(self) -> None:
        self.H = np.asarray(self.H, dtype=float)
        if self.m <= 0:
            raise SimulationError("mass must be positive")
        if self.H.shape != (3, 3) or not np.allclose(self.H, self.H.T):
            raise SimulationError("inertia must be a symmetric 3x3 matrix")
        if np.min(np.linalg.eigvalsh(self.H)) <= 0:
            raise SimulationError("inertia must be positive definite")
        if self.footprint_radius <= 0 or self.v_limit <= 0:
            raise SimulationError("footprint_radius and v_limit must be positive")
        if self.guard_radius <= 0:
            raise SimulationError("footprint_radius too small for the arm radius")
        self.H_inv = np.linalg.inv(self.H)

    @property
    def guard_radius(self) -> float:
        # guards at 45 deg; the craft's extent along each body axis equals footprint_radius
        return self.footprint_radius - self.arm_radius * math.cos(math.pi / 4)

    def arm_origin(self, i: int) -> np.ndarray:
        """Arm-frame origin in the body frame, arm index 0..3."""
        mu = ARM_MU[i]
        return np.array([self.arm_radius * math.cos(mu), self.arm_radius * math.sin(mu), 0.0])


@dataclass
class ArmParams:
    J_zz: float = 0.0015
    b: float = 0.009
    k: float = 1.307
    l: float = 0.113
    theta_max: float = math.radians(30.0)

    def __post_init__(self) -> None:
        if min(self.J_zz, self.b, self.k, self.l) <= 0:
            raise SimulationError("arm J_zz, b, k and l must be positive")
        if not 0 < self.theta_max <= math.radians(30.0) + 1e-12:
            raise SimulationError("theta_max must lie in (0, 30 deg]")


@dataclass
class VehicleState:
    x: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    Omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    theta: np.ndarray = field(default_factory=lambda: np.zeros(4))
    theta_dot: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def copy(self) -> "VehicleState":
        return VehicleState(
            self.x.copy(), self.v.copy(), self.R.copy(), self.Omega.copy(),
            self.theta.copy(), self.theta_dot.copy(),
        )


@dataclass
class Environment:
    obstacles: list = field(default_factory=list)
    wall_stiffness: float = 800.0
    wall_damping: float = 40.0
    mu_c: float = 0.3
    e: float = 0.09
    mu_t: float = 0.5
    v_impulse: float = 0.3

    def __post_init__(self) -> None:
        polys = []
        for poly in self.obstacles:
            P = np.asarray(poly, dtype=float)
            if P.ndim != 2 or P.shape[1] != 2 or len(P) < 3:
                raise SimulationError("obstacle polygons need at least three 2-D vertices")
            if np.allclose(P[0], P[-1]):
                P = P[:-1]
            edges = np.roll(P, -1, axis=0) - P
            if np.any(np.hypot(edges[:, 0], edges[:, 1]) < 1e-9):
                raise SimulationError("obstacle polygon has a zero-length edge")
            polys.append(P)
        self.obstacles = polys
        if self.wall_stiffness <= 0:
            raise SimulationError("wall_stiffness must be positive")
        if not 0 <= self.e < 1:
            raise SimulationError("restitution must satisfy 0 <= e < 1")
        if self.mu_c < 0 or not 0 <= self.mu_t <= 1:
            raise SimulationError("friction coefficients out of range")
        self._geom = [_polygon_geometry(P) for P in self.obstacles]


@dataclass
class ContactEvent:
    arm_index: int
    point: np.ndarray
    normal: np.ndarray
    penetration: float
    normal_force: float
    impulsive: bool
    approach_speed: float = 0.0
    obstacle: int = 0


def _check_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise SimulationError("non-finite input rejected")


def _check_dt(dt: float) -> None:
    if not (0.0 < dt <= DT_MAX) or not math.isfinite(dt):
        raise SimulationError(f"dt={dt!r} outside (0, {DT_MAX}]")


def rigid_body_accel(state: VehicleState, f: float, params: BodyParams, ext_force: np.ndarray) -> np.ndarray:
    return (params.m * params.g * E3 - f * state.R[:, 2] + ext_force) / params.m


def step_rigid_body(
    state: VehicleState,
    f: float,
    tau: np.ndarray,
    ext_wrench: tuple,
    dt: float,
    params: BodyParams,
) -> VehicleState:
    """Semi-implicit Euler step of the translational and rotational dynamics.

    Velocities are advanced first and the updated values drive the position
    and attitude update. Arm states are carried over untouched.
    """
    _check_dt(dt)
    ext_f = np.asarray(ext_wrench[0], dtype=float)
    ext_tau = np.asarray(ext_wrench[1], dtype=float)
    tau = np.asarray(tau, dtype=float)
    _check_finite(ext_f, ext_tau, tau, np.array([f]))

    a = rigid_body_accel(state, f, params, ext_f)
    v = state.v + dt * a
    x = state.x + dt * v

    H = params.H
    Om = state.Omega
    om_dot = params.H_inv @ (tau + ext_tau + np.cross(H @ Om, Om))
    Omega = Om + dt * om_dot
    R = orthonormalize(state.R @ expm_so3(Omega * dt))
    return VehicleState(x, v, R, Omega, state.theta.copy(), state.theta_dot.copy())


def step_arm(theta: float, theta_dot: float, params: ArmParams, ext_torque: float, dt: float) -> tuple:
    """Advance one arm with the implicit midpoint rule, then apply the hard stop.

    The midpoint rule makes the discrete energy change exactly
    -dt * b * (mid-step rate)^2 when no torque is applied.
    """
    _check_dt(dt)
    if not all(math.isfinite(q) for q in (theta, theta_dot, ext_torque)):
        raise SimulationError("non-finite arm input rejected")
    J, b, k = params.J_zz, params.b, params.k
    h = 0.5 * dt
    # (I - h A) z1 = (I + h A) z0 + dt * u, A = [[0, 1], [-k/J, -b/J]]
    a11, a12 = 1.0, -h
    a21, a22 = h * k / J, 1.0 + h * b / J
    r1 = theta + h * theta_dot
    r2 = theta_dot - h * (k * theta + b * theta_dot) / J + dt * ext_torque / J
    det = a11 * a22 - a12 * a21
    th = (r1 * a22 - a12 * r2) / det
    thd = (a11 * r2 - a21 * r1) / det
    if th > params.theta_max:
        th, thd = params.theta_max, 0.0
    elif th < -params.theta_max:
        th, thd = -params.theta_max, 0.0
    return th, thd


def arm_energy(theta: float, theta_dot: float, params: ArmParams) -> float:
    return 0.5 * params.J_zz * theta_dot**2 + 0.5 * params.k * theta**2


def arm_deflection_angle(i: int, theta_i: float) -> float:
    """Arm-frame heading in the body frame for arm i in 1..4."""
    if i not in (1, 2, 3, 4):
        raise SimulationError(f"arm index {i} not in 1..4")
    return ARM_NU[i - 1] + ARM_MU[i - 1] + theta_i


def arm_rotation(varphi: float) -> np.ndarray:
    if not math.isfinite(varphi):
        raise SimulationError("non-finite arm angle")
    return rot_z(varphi)


def resolve_collision(v: np.ndarray, normal: np.ndarray, e: float, mu_t: float = 0.0) -> np.ndarray:
    """Instantaneous post-impact velocity.

    The normal part is reversed and scaled by ``e`` and the tangential part is
    scaled by ``1 - mu_t``. A velocity that is not approaching the surface is
    returned unchanged.
    """
    v = np.asarray(v, dtype=float)
    n = np.asarray(normal, dtype=float)
    vn = float(v @ n)
    if vn >= 0.0:
        return v.copy()
    v_n = vn * n
    v_t = v - v_n
    return (1.0 - mu_t) * v_t - e * v_n


# --- polygon contact geometry -------------------------------------------------


def _polygon_geometry(P: np.ndarray) -> dict:
    A = P
    B = np.roll(P, -1, axis=0)
    d = B - A
    lo = P.min(axis=0)
    hi = P.max(axis=0)
    return {"A": A, "d": d, "len2": np.einsum("ij,ij->i", d, d), "lo": lo, "hi": hi}


def point_in_polygon(p: np.ndarray, P: np.ndarray) -> bool:
    x, y = float(p[0]), float(p[1])
    inside = False
    n = len(P)
    j = n - 1
    for i in range(n):
        xi, yi = P[i]
        xj, yj = P[j]
        if (yi > y) != (yj > y) and x < (xj - xi) * (y - yi) / (yj - yi) + xi:
            inside = not inside
        j = i
    return inside


def closest_boundary_point(p: np.ndarray, geom: dict) -> tuple:
    """Closest point on the polygon boundary and its distance."""
    A, d, len2 = geom["A"], geom["d"], geom["len2"]
    t = np.clip(((p[0] - A[:, 0]) * d[:, 0] + (p[1] - A[:, 1]) * d[:, 1]) / len2, 0.0, 1.0)
    cx = A[:, 0] + t * d[:, 0]
    cy = A[:, 1] + t * d[:, 1]
    dist2 = (cx - p[0]) ** 2 + (cy - p[1]) ** 2
    j = int(np.argmin(dist2))
    return np.array([cx[j], cy[j]]), math.sqrt(float(dist2[j])), j


def guard_centers(state: VehicleState, params: BodyParams) -> np.ndarray:
    """World xy positions of the four guard circle centers."""
    out = np.empty((4, 2))
    for i in range(4):
        p = state.x + state.R @ params.arm_origin(i)
        out[i] = p[:2]
    return out


def detect_contacts(state: VehicleState, env: Environment, params: BodyParams) -> list:
    """Penetrating guard/obstacle pairs with penalty normal force magnitudes."""
    rho = params.guard_radius
    events = []
    centers = None
    for k, (P, geom) in enumerate(zip(env.obstacles, env._geom)):
        lo, hi = geom["lo"], geom["hi"]
        reach = rho + params.arm_radius + 1e-9
        if (state.x[0] < lo[0] - reach or state.x[0] > hi[0] + reach
                or state.x[1] < lo[1] - reach or state.x[1] > hi[1] + reach):
            continue
        if centers is None:
            centers = guard_centers(state, params)
        for i in range(4):
            c = centers[i]
            q, dist, j = closest_boundary_point(c, geom)
            inside = point_in_polygon(c, P)
            if not inside and dist >= rho:
                continue
            if dist > 1e-12:
                n2 = (c - q) / dist
                if inside:
                    n2 = -n2
            else:
                ed = geom["d"][j]
                n2 = np.array([ed[1], -ed[0]]) / math.sqrt(geom["len2"][j])
                if point_in_polygon(q + 1e-6 * n2, P):
                    n2 = -n2
            pen = rho + dist if inside else rho - dist
            normal = np.array([n2[0], n2[1], 0.0])
            r_world = np.array([q[0], q[1], state.x[2]]) - state.x
            v_pt = state.v + state.R @ np.cross(state.Omega, state.R.T @ r_world)
            vn = float(v_pt @ normal)
            fn = env.wall_stiffness * pen + env.wall_damping * max(0.0, -vn)
            events.append(ContactEvent(
                arm_index=i,
                point=np.array([q[0], q[1], state.x[2]]),
                normal=normal,
                penetration=float(pen),
                normal_force=max(0.0, float(fn)),
                impulsive=(-vn) > env.v_impulse,
                approach_speed=max(0.0, -vn),
                obstacle=k,
            ))
    return events


def arm_load_share(normal: np.ndarray, i: int, R: np.ndarray) -> float:
    """Scale from a contact normal force to the force normal to arm i.

    Contacts are lumped at the arm as a force along the arm normal whose
    component along the surface normal equals the contact force. The
    share fades to zero as the surface normal turns along the arm axis.
    """
    a1 = R @ arm_rotation(arm_deflection_angle(i + 1, 0.0))[:, 0]
    s = float(a1 @ normal)
    return s / max(s * s, 0.25)


def contact_wrench(
    state: VehicleState, events: Sequence[ContactEvent], env: Environment, params: BodyParams,
    friction_eps: float = 0.02,
) -> tuple:
    """Total contact force (world), torque (body) and per-arm normal loads."""
    force = np.zeros(3)
    torque_w = np.zeros(3)
    arm_loads = np.zeros(4)
    for ev in events:
        n = ev.normal
        fn = ev.normal_force
        r_world = ev.point - state.x
        v_pt = state.v + state.R @ np.cross(state.Omega, state.R.T @ r_world)
        v_t = v_pt - (v_pt @ n) * n
        v_t[2] = 0.0
        speed = math.sqrt(float(v_t @ v_t))
        F = fn * n - env.mu_c * fn * v_t / (speed + friction_eps)
        force += F
        torque_w += np.cross(r_world, F)
        if ev.arm_index != CENTER:
            arm_loads[ev.arm_index] += fn * arm_load_share(n, ev.arm_index, state.R)
    return force, state.R.T @ torque_w, arm_loads


def apply_impacts(
    state: VehicleState, events: Sequence[ContactEvent], env: Environment, params: BodyParams,
    arm: ArmParams,
) -> tuple:
    """Restitution jump for impulsive contacts.

    Returns the updated state and the number of impacts applied. The kinetic
    energy removed from the normal motion is handed to the struck arms as a
    deflection rate, so the hard stop bounds how far they swing.
    """
    imp = [ev for ev in events if ev.impulsive]
    if not imp:
        return state, 0
    n = sum(ev.normal for ev in imp)
    nn = math.sqrt(float(n @ n))
    if nn < 1e-9:
        return state, 0
    n = n / nn
    if float(state.v @ n) >= 0.0:
        return state, 0
    out = state.copy()
    v_post = resolve_collision(state.v, n, env.e, env.mu_t)
    out.v = v_post
    vn = float(state.v @ n)
    lost = 0.5 * params.m * vn * vn * (1.0 - env.e**2)
    share = lost / len(imp)
    for ev in imp:
        i = ev.arm_index
        if i == CENTER:
            continue
        s = arm_load_share(ev.normal, i, state.R)
        if abs(s) < 1e-9:
            continue
        rate = math.copysign(math.sqrt(2.0 * share * min(1.0, abs(s)) / arm.J_zz), s)
        out.theta_dot[i] += rate
    return out, len(imp)


def state_is_valid(state: VehicleState, arm: Optional[ArmParams] = None, tol: float = 1e-9) -> bool:
    R = state.R
    if np.max(np.abs(R.T @ R - np.eye(3))) >= tol:
        return False
    if abs(np.linalg.det(R) - 1.0) > tol:
        return False
    if arm is not None and np.any(np.abs(state.theta) > arm.theta_max + 1e-12):
        return False
    return all(np.all(np.isfinite(a)) for a in (state.x, state.v, state.Omega, state.theta, state.theta_dot))


__all__ = [
    "ARM_MU", "ARM_NU", "CENTER", "ArmParams", "BodyParams", "ContactEvent", "Environment",
    "SimulationError", "VehicleState", "apply_impacts", "arm_deflection_angle", "arm_energy",
    "arm_load_share", "arm_rotation", "contact_wrench", "detect_contacts", "hat",
    "resolve_collision", "rigid_body_accel", "state_is_valid", "step_arm", "step_rigid_body",
]
