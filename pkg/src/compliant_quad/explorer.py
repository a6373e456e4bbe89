"""Tactile exploration state machine: Exploration, Tactile-turning, Tactile-traversal.

Force inputs are body-frame contact forces, i.e. the force the craft presses
onto its surroundings (the negative of the external-force estimate). A
positive x component therefore means an obstacle ahead on +b1.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .control import Admittance, AdmittanceParams
from .rotations import rot_z

EXPLORATION, TURNING, TRAVERSAL = 1, 2, 3

LAMBDAS = ("+X", "-X", "+Y", "-Y")
LAMBDA_AXIS = {"+X": np.array([1.0, 0.0]), "-X": np.array([-1.0, 0.0]),
               "+Y": np.array([0.0, 1.0]), "-Y": np.array([0.0, -1.0])}
LAMBDA_CODE = {"+X": 1, "-X": -1, "+Y": 2, "-Y": -2}

# one-hot contact normal -> obstacle direction in the body frame
CN_AXIS = (np.array([1.0, 0.0]), np.array([-1.0, 0.0]), np.array([0.0, 1.0]), np.array([0.0, -1.0]))
CN_TO_LAMBDA = ("+Y", "-Y", "-X", "+X")


@dataclass
class ExplorerParams:
    psi_dot_0: float = 0.4
    psi_dot_c: float = 0.26
    delta_0: float = 1.5
    delta_psi_0: float = 1.6
    d_step: float = 0.25
    f_des: float = 1.25
    delta_0_x: float = None
    delta_0_y: float = None
    hover_altitude: float = 0.7
    force_window: int = 50
    yaw_rate_cutoff: float = 5.0
    turn_refractory: float = 1.0

    def __post_init__(self) -> None:
        if self.delta_0_x is None:
            self.delta_0_x = self.delta_0
        if self.delta_0_y is None:
            self.delta_0_y = self.delta_0
        vals = (self.psi_dot_0, self.psi_dot_c, self.delta_0, self.delta_psi_0, self.d_step, self.f_des,
                self.delta_0_x, self.delta_0_y)
        if min(vals) <= 0:
            raise ValueError("explorer parameters must be positive")
        if self.delta_psi_0 <= self.delta_0:
            raise ValueError(
                f"delta_psi_0 ({self.delta_psi_0}) must exceed delta_0 ({self.delta_0})")

    @property
    def hover_z(self) -> float:
        # z-down frame
        return -self.hover_altitude


@dataclass
class ExplorerState:
    gamma: int = EXPLORATION
    C_n: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=int))
    lam: str = "+X"
    lam_prev: str = "+X"
    psi_sp: float = 0.0
    turn_accum: float = 0.0
    turn_dir: float = 0.0
    held_y: float = None
    anchor: np.ndarray = None
    turn_offset: np.ndarray = None
    body_sp: np.ndarray = field(default_factory=lambda: np.zeros(2))
    contacted: bool = False
    since_turn: float = math.inf


def _is_one_hot(C_n) -> bool:
    c = np.asarray(C_n)
    return c.shape == (4,) and set(np.unique(c).tolist()) <= {0, 1} and int(c.sum()) == 1


def update_contact_normal(body_force, lam: str, params: ExplorerParams, C_n=None) -> np.ndarray:
    """Contact normal update keyed on the current move direction."""
    C = np.zeros(4, dtype=int) if C_n is None else np.array(C_n, dtype=int)
    fx, fy = float(body_force[0]), float(body_force[1])
    if lam in ("+X", "-X"):
        if fx > params.delta_0_x:
            C = np.array([1, 0, 0, 0])
        elif fx < -params.delta_0_x:
            C = np.array([0, 1, 0, 0])
    elif lam in ("+Y", "-Y"):
        if fy > params.delta_0_y:
            C = np.array([0, 0, 1, 0])
        elif fy < -params.delta_0_y:
            C = np.array([0, 0, 0, 1])
    else:
        raise ValueError(f"unknown move direction {lam!r}")
    return C


def update_move_direction(C_n) -> str:
    if not _is_one_hot(C_n):
        raise ValueError(f"contact normal {C_n!r} is not one-hot")
    return CN_TO_LAMBDA[int(np.argmax(C_n))]


def setpoint_to_world(body_sp, R: np.ndarray, hover_z: float = None) -> np.ndarray:
    out = np.asarray(R, dtype=float) @ np.asarray(body_sp, dtype=float)
    if hover_z is not None:
        out[2] = hover_z
    return out


class MovingAverage:
    def __init__(self, n: int, dim: int = 3):
        self.buf = deque(maxlen=n)
        self.dim = dim

    def __call__(self, x) -> np.ndarray:
        self.buf.append(np.asarray(x, dtype=float))
        return np.mean(self.buf, axis=0)


class LowPass:
    def __init__(self, cutoff_hz: float, dt: float):
        self.alpha = 1.0 - math.exp(-2 * math.pi * cutoff_hz * dt)
        self.y = None

    def __call__(self, x: float) -> float:
        self.y = x if self.y is None else self.y + self.alpha * (x - self.y)
        return self.y


@dataclass
class ExplorerOutput:
    setpoint: np.ndarray
    psi_sp: float
    gamma: int
    delta_f_des_body: np.ndarray
    yaw_admittance: bool


class Explorer:
    """Runs the three-state machine and produces world-frame setpoints.

    Setpoints are built in yaw-aligned body coordinates. The axis pressed into
    the obstacle is reshaped by a body-frame admittance so the contact force
    settles at ``f_des``; yaw follows the admittance except while turning.
    """

    def __init__(self, params: ExplorerParams, admittance: AdmittanceParams, psi0: float = 0.0):
        self.params = params
        self.adm_params = admittance
        self.adm = Admittance(admittance)
        self.state = ExplorerState(psi_sp=psi0)
        self.transitions = []

    # -- individual state steps --------------------------------------------

    def exploration_step(self, pos_b: np.ndarray, yaw_rate: float, force_b: np.ndarray) -> int:
        p, st = self.params, self.state
        fmag = math.hypot(force_b[0], force_b[1])
        if st.held_y is None:
            st.held_y = float(pos_b[1])
        if abs(yaw_rate) < p.psi_dot_0 and fmag < p.delta_0:
            st.body_sp = np.array([pos_b[0] + p.d_step, st.held_y])
            return EXPLORATION
        if abs(yaw_rate) > p.psi_dot_0:
            return TURNING
        return TRAVERSAL

    def tactile_turn_step(self, yaw_rate: float, force_b: np.ndarray, dt: float) -> int:
        p, st = self.params, self.state
        fmag = math.hypot(force_b[0], force_b[1])
        if fmag >= p.delta_psi_0 or st.turn_accum >= math.pi - 1e-12:
            return TRAVERSAL
        inc = min(p.psi_dot_c * dt, math.pi - st.turn_accum)
        st.psi_sp += st.turn_dir * inc
        st.turn_accum += inc
        if st.turn_accum >= math.pi - 1e-12:
            return TRAVERSAL
        return TURNING

    def tactile_traverse_step(self, pos_b: np.ndarray, yaw_rate: float, force_b: np.ndarray) -> int:
        p, st = self.params, self.state
        st.lam_prev = st.lam
        C_new = update_contact_normal(force_b, st.lam, p, st.C_n if st.contacted else None)
        if C_new.sum() == 1:
            if not st.contacted or not np.array_equal(C_new, st.C_n):
                st.C_n = C_new
                st.contacted = True
                st.lam = update_move_direction(C_new)
        if not st.contacted:
            # no registered contact yet: keep pushing along the current direction
            st.C_n = np.zeros(4, dtype=int)
        axis = LAMBDA_AXIS[st.lam]
        sp = pos_b[:2].copy()
        if axis[0] != 0:
            sp[0] = pos_b[0] + axis[0] * p.d_step
            sp[1] = pos_b[1]
        else:
            sp[1] = pos_b[1] + axis[1] * p.d_step
            sp[0] = pos_b[0]
        st.body_sp = sp
        # re-contact after a turn jolts the yaw; ignore it for a short while
        if abs(yaw_rate) > p.psi_dot_0 and st.since_turn >= p.turn_refractory:
            return TURNING
        return TRAVERSAL

    # -- driver ---------------------------------------------------------------

    def obstacle_dir(self) -> np.ndarray:
        st = self.state
        if not st.contacted:
            return LAMBDA_AXIS[st.lam]
        return CN_AXIS[int(np.argmax(st.C_n))]

    def step(self, t: float, pos: np.ndarray, psi: float, yaw_rate: float, force_b: np.ndarray,
             yaw_torque: float, dt: float) -> ExplorerOutput:
        p, st = self.params, self.state
        Rz = rot_z(st.psi_sp)
        pos_b = Rz.T @ np.asarray(pos, dtype=float)
        g0 = st.gamma
        st.since_turn += dt

        if st.gamma == EXPLORATION:
            st.gamma = self.exploration_step(pos_b, yaw_rate, force_b)
        elif st.gamma == TURNING:
            st.gamma = self.tactile_turn_step(yaw_rate, force_b, dt)
        else:
            st.gamma = self.tactile_traverse_step(pos_b, yaw_rate, force_b)

        if st.gamma != g0:
            self.transitions.append((t, g0, st.gamma))
            if st.gamma == TURNING:
                self._enter_turning(pos, yaw_rate)
            elif st.gamma == TRAVERSAL:
                self.adm.reset()
                if g0 == TURNING:
                    st.since_turn = 0.0
                if g0 == EXPLORATION or g0 == TURNING:
                    st.gamma = self.tactile_traverse_step(pos_b, 0.0, force_b)
                    if st.gamma != TRAVERSAL:
                        st.gamma = TRAVERSAL

        if st.gamma == TURNING:
            c, s = math.cos(st.psi_sp), math.sin(st.psi_sp)
            off = st.turn_offset
            sp = st.anchor + np.array([c * off[0] - s * off[1], s * off[0] + c * off[1]])
            return ExplorerOutput(np.array([sp[0], sp[1], p.hover_z]), st.psi_sp, TURNING, np.zeros(3), False)

        # admittance in yaw-aligned body axes; only the pressed axis is reshaped
        des_b = np.zeros(3)
        pressed = None
        if st.gamma == TRAVERSAL:
            n_obs = self.obstacle_dir()
            des_b[:2] = -p.f_des * n_obs
            pressed = 0 if n_obs[0] != 0 else 1
        ext_b = -np.array([force_b[0], force_b[1], 0.0])
        r_star = np.array([pos_b[0], pos_b[1], 0.0])
        # yaw admittance about the measured heading: the craft yields to contact
        # torque instead of storing it in the attitude loop
        r_d, psi_d = self.adm.step(ext_b, yaw_torque, r_star, psi, dt, delta_f_des=des_b)
        sp_b = st.body_sp.copy()
        if pressed is not None:
            sp_b[pressed] = r_d[pressed]
        world = Rz @ np.array([sp_b[0], sp_b[1], 0.0])
        st.psi_sp = psi_d
        return ExplorerOutput(np.array([world[0], world[1], p.hover_z]), psi_d, st.gamma, des_b, True)

    def _enter_turning(self, pos, yaw_rate: float) -> None:
        st = self.state
        st.turn_dir = 1.0 if yaw_rate > 0 else -1.0
        st.turn_accum = 0.0
        st.anchor = np.asarray(pos[:2], dtype=float).copy()
        # keep the last commanded offset fixed in the turning body frame
        c, s = math.cos(st.psi_sp), math.sin(st.psi_sp)
        px = c * pos[0] + s * pos[1]
        py = -s * pos[0] + c * pos[1]
        st.turn_offset = np.array([st.body_sp[0] - px, st.body_sp[1] - py])
        self.adm.reset()
