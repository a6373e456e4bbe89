"""Cascaded P-PID tracking plus the three interaction modes.

The position loop feeds a velocity PID that produces a thrust vector; the
attitude loop feeds a body-rate PID that produces torque. Setpoints can be
reshaped by a virtual mass-spring-damper (admittance) driven by the force
and yaw-torque estimates, or replaced by a recovery setpoint after impact.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .rotations import E3, log_so3
from .simcore import BodyParams, VehicleState


class Mode(enum.Enum):
    STATIC_WRENCH = "STATIC_WRENCH"
    DISTURBANCE_REJECT = "DISTURBANCE_REJECT"
    YIELD = "YIELD"


def _vec3(values) -> np.ndarray:
    return np.asarray(values, dtype=float).reshape(3)


@dataclass
class PpidGains:
    pos_p: np.ndarray = field(default_factory=lambda: np.array([1.5, 1.5, 1.5]))
    vel_p: np.ndarray = field(default_factory=lambda: np.array([3.0, 3.0, 4.0]))
    vel_i: np.ndarray = field(default_factory=lambda: np.array([0.6, 0.6, 1.0]))
    vel_d: np.ndarray = field(default_factory=lambda: np.zeros(3))
    vel_i_limit: float = 3.0
    att_p: np.ndarray = field(default_factory=lambda: np.array([6.0, 6.0, 4.0]))
    rate_p: np.ndarray = field(default_factory=lambda: np.array([20.0, 20.0, 10.0]))
    rate_i: np.ndarray = field(default_factory=lambda: np.array([2.0, 2.0, 1.0]))
    rate_d: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rate_i_limit: float = 2.0
    max_tilt: float = math.radians(35.0)
    thrust_max: float = 25.0
    torque_max: np.ndarray = field(default_factory=lambda: np.array([0.6, 0.6, 0.3]))

    def __post_init__(self) -> None:
        for name in ("pos_p", "vel_p", "vel_i", "vel_d", "att_p", "rate_p", "rate_i", "rate_d", "torque_max"):
            setattr(self, name, _vec3(getattr(self, name)))
        gains = np.concatenate([self.pos_p, self.vel_p, self.vel_i, self.vel_d,
                                self.att_p, self.rate_p, self.rate_i, self.rate_d])
        if np.any(gains < 0):
            raise ValueError("P-PID gains must be non-negative")
        if self.thrust_max <= 0 or np.any(self.torque_max <= 0):
            raise ValueError("output limits must be positive")


@dataclass
class Setpoint:
    r_d: np.ndarray
    psi_d: float
    r_d_star: np.ndarray = None
    psi_d_star: float = None
    mode: Mode = Mode.DISTURBANCE_REJECT
    force_ff: np.ndarray = None

    def __post_init__(self) -> None:
        self.r_d = _vec3(self.r_d)
        self.force_ff = np.zeros(3) if self.force_ff is None else _vec3(self.force_ff)
        if self.r_d_star is None:
            self.r_d_star = self.r_d.copy()
        if self.psi_d_star is None:
            self.psi_d_star = self.psi_d


def attitude_from_thrust(b3: np.ndarray, psi: float) -> np.ndarray:
    b1c = np.array([math.cos(psi), math.sin(psi), 0.0])
    b2 = np.cross(b3, b1c)
    n = np.linalg.norm(b2)
    if n < 1e-9:
        b2 = np.array([-math.sin(psi), math.cos(psi), 0.0])
    else:
        b2 = b2 / n
    b1 = np.cross(b2, b3)
    return np.column_stack([b1, b2, b3])


class PpidController:
    """Integrator-carrying P-PID cascade for one vehicle."""

    def __init__(self, gains: PpidGains, body: BodyParams):
        self.gains = gains
        self.body = body
        self.vel_int = np.zeros(3)
        self.rate_int = np.zeros(3)
        self.prev_vel_err = None
        self.prev_rate_err = None

    def reset_integrators(self) -> None:
        self.vel_int[:] = 0.0
        self.rate_int[:] = 0.0

    def position(self, state: VehicleState, sp: Setpoint, dt: float) -> tuple:
        """Thrust magnitude and attitude setpoint for a position/yaw setpoint."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        g = self.gains
        body = self.body
        v_cmd = g.pos_p * (sp.r_d - state.x)
        sp_xy = math.hypot(v_cmd[0], v_cmd[1])
        if sp_xy > body.v_limit:
            v_cmd[:2] *= body.v_limit / sp_xy
        v_cmd[2] = max(-body.v_limit, min(body.v_limit, v_cmd[2]))

        err = v_cmd - state.v
        lim = g.vel_i_limit / np.maximum(g.vel_i, 1e-12)
        self.vel_int = np.clip(self.vel_int + err * dt, -lim, lim)
        d_err = np.zeros(3) if self.prev_vel_err is None else (err - self.prev_vel_err) / dt
        self.prev_vel_err = err
        a_cmd = g.vel_p * err + g.vel_i * self.vel_int + g.vel_d * d_err

        # force_ff is the external force expected from the environment
        F = body.m * (body.g * E3 - a_cmd) + sp.force_ff
        # keep the commanded thrust vector inside the tilt cone
        Fz = max(F[2], 0.2 * body.m * body.g)
        horiz = math.hypot(F[0], F[1])
        h_max = Fz * math.tan(g.max_tilt)
        if horiz > h_max:
            F[0] *= h_max / horiz
            F[1] *= h_max / horiz
        F[2] = Fz
        b3 = F / np.linalg.norm(F)
        f = float(F @ state.R[:, 2])
        f = min(max(f, 0.0), g.thrust_max)
        return f, attitude_from_thrust(b3, sp.psi_d)

    def attitude(self, state: VehicleState, R_des: np.ndarray, dt: float) -> np.ndarray:
        """Body torque from the rotation-log attitude error and a rate PID."""
        g = self.gains
        e_R = log_so3(R_des.T @ state.R)
        Om_cmd = -g.att_p * e_R
        err = Om_cmd - state.Omega
        lim = g.rate_i_limit / np.maximum(g.rate_i, 1e-12)
        self.rate_int = np.clip(self.rate_int + err * dt, -lim, lim)
        d_err = np.zeros(3) if self.prev_rate_err is None else (err - self.prev_rate_err) / dt
        self.prev_rate_err = err
        H = self.body.H
        alpha = g.rate_p * err + g.rate_i * self.rate_int + g.rate_d * d_err
        tau = H @ alpha - np.cross(H @ state.Omega, state.Omega)
        return np.clip(tau, -g.torque_max, g.torque_max)


def ppid_position(state: VehicleState, sp: Setpoint, controller: PpidController, dt: float) -> tuple:
    return controller.position(state, sp, dt)


def ppid_attitude(state: VehicleState, attitude_sp: np.ndarray, controller: PpidController, dt: float) -> np.ndarray:
    return controller.attitude(state, attitude_sp, dt)


@dataclass
class AdmittanceParams:
    m_v: float = 1.0
    I_vz: float = 1.0
    D: np.ndarray = field(default_factory=lambda: np.array([24.5, 24.5, 0.0, 1.0]))
    K: np.ndarray = field(default_factory=lambda: np.array([24.5, 24.5, 0.0, 1.0]))
    delta_f_des: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        D = np.asarray(self.D, dtype=float)
        K = np.asarray(self.K, dtype=float)
        # accept full 4x4 diagonal matrices as well as their diagonals
        self.D = np.diag(D).copy() if D.ndim == 2 else D.reshape(4)
        self.K = np.diag(K).copy() if K.ndim == 2 else K.reshape(4)
        self.delta_f_des = _vec3(self.delta_f_des)
        if self.m_v <= 0 or self.I_vz <= 0:
            raise ValueError("virtual mass and inertia must be positive")
        if np.any(self.D < 0) or np.any(self.K < 0):
            raise ValueError("admittance D and K must be non-negative")

    @property
    def mass(self) -> np.ndarray:
        return np.array([self.m_v, self.m_v, self.m_v, self.I_vz])

    @property
    def active(self) -> np.ndarray:
        """Axes that are reshaped; axes with zero D and K stay at their setpoint."""
        return (self.D > 0) | (self.K > 0)


class Admittance:
    """Virtual second-order dynamics on (x, y, z, yaw) displacements."""

    def __init__(self, params: AdmittanceParams):
        self.params = params
        self.disp = np.zeros(4)
        self.rate = np.zeros(4)

    def reset(self) -> None:
        self.disp[:] = 0.0
        self.rate[:] = 0.0

    def step(self, force_est: np.ndarray, yaw_torque: float, r_star: np.ndarray, psi_star: float,
             dt: float, delta_f_des: np.ndarray = None) -> tuple:
        if dt <= 0:
            raise ValueError("dt must be positive")
        p = self.params
        des = p.delta_f_des if delta_f_des is None else _vec3(delta_f_des)
        drive = np.empty(4)
        drive[:3] = _vec3(force_est) - des
        drive[3] = yaw_torque
        acc = (drive - p.D * self.rate - p.K * self.disp) / p.mass
        self.rate = self.rate + dt * acc
        self.disp = self.disp + dt * self.rate
        frozen = ~p.active
        self.rate[frozen] = 0.0
        self.disp[frozen] = 0.0
        r_d = _vec3(r_star) + self.disp[:3]
        return r_d, float(psi_star + self.disp[3])


def admittance_reshape(params: AdmittanceParams, fused, sp_star: tuple, internal: Admittance, dt: float) -> tuple:
    """Functional wrapper: ``fused`` is a ForceEstimate or (force, yaw_torque)."""
    if hasattr(fused, "fused"):
        force, yaw = fused.fused, fused.yaw_torque
    else:
        force, yaw = fused
    internal.params = params
    return internal.step(force, yaw, sp_star[0], sp_star[1], dt)


def recovery_setpoint(pre_collision_v: np.ndarray, pose: np.ndarray, c: float = 0.5, psi: float = 0.0) -> Setpoint:
    """Setpoint displaced against the approach velocity, yaw held."""
    v = _vec3(pre_collision_v)
    pose = _vec3(pose)
    if float(np.linalg.norm(v)) < 1e-12:
        return Setpoint(pose.copy(), psi, mode=Mode.YIELD)
    return Setpoint(pose - c * v, psi, r_d_star=pose.copy(), mode=Mode.YIELD)


def select_mode(mission: str, impulsive_contact: bool = False, mission_force: bool = False) -> Mode:
    """Flight mode for the current tick.

    ``mission`` is one of EXPLORE_MAP, STATIC_WRENCH, COB or NONE.
    """
    if mission == "COB" and impulsive_contact:
        return Mode.YIELD
    if mission in ("EXPLORE_MAP", "STATIC_WRENCH") or mission_force:
        return Mode.STATIC_WRENCH
    return Mode.DISTURBANCE_REJECT
