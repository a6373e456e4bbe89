"""Fixed-rate simulation loop, trace logging and reports."""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import cob
from .control import (Admittance, Mode, PpidController, Setpoint, recovery_setpoint, select_mode)
from .estimator import ForceEstimator, world_to_body
from .explorer import (EXPLORATION, LAMBDA_CODE, TRAVERSAL, TURNING, Explorer, LowPass, MovingAverage)
from .mapper import Gate, MapCloud, emit_block, map_metrics, mapping_gate, write_ply
from .rotations import rot_z, yaw_of
from .scenario import Scenario
from .simcore import (SimulationError, VehicleState, apply_impacts, contact_wrench, detect_contacts,
                      step_arm, step_rigid_body)

COLUMNS = (
    ["t", "step", "est_tick"]
    + ["x", "y", "z", "vx", "vy", "vz"]
    + [f"R{i}{j}" for i in range(3) for j in range(3)]
    + ["wx", "wy", "wz"]
    + [f"theta{i}" for i in range(1, 5)] + [f"theta_dot{i}" for i in range(1, 5)]
    + ["f_cmd", "tau_x", "tau_y", "tau_z"]
    + ["sp_x", "sp_y", "sp_z", "sp_psi", "mode"]
    + ["com_x", "com_y", "com_z", "arm_x", "arm_y", "arm_z", "fused_x", "fused_y", "fused_z"]
    + ["body_x", "body_y", "body_z", "upsilon", "yaw_torque", "kappa_x", "kappa_y", "kappa_z"]
    + ["contact_fx", "contact_fy", "contact_fz", "contact_tz", "n_contacts", "impacts"]
    + ["gamma", "cn1", "cn2", "cn3", "cn4", "lambda", "lambda_prev", "psi_sp", "turn_accum"]
    + ["map_emit", "map_blocks", "loop_closed"]
)
MODE_CODE = {Mode.STATIC_WRENCH: 1, Mode.DISTURBANCE_REJECT: 2, Mode.YIELD: 3}

EST_INPUT_COLUMNS = (["step"] + [f"raw_theta{i}" for i in range(1, 5)] + ["ax", "ay", "az", "f_norm"]
                     + [f"R{i}{j}" for i in range(3) for j in range(3)] + ["wx", "wy", "wz"]
                     + ["tau_x", "tau_y", "tau_z", "gyro_x", "gyro_y", "gyro_z"])


@dataclass
class Trace:
    columns: tuple = tuple(COLUMNS)
    rows: list = field(default_factory=list)
    est_inputs: list = field(default_factory=list)
    events: list = field(default_factory=list)
    cloud: MapCloud = None
    transitions: list = field(default_factory=list)

    def array(self) -> np.ndarray:
        return np.asarray(self.rows, dtype=float).reshape(-1, len(self.columns))

    def col(self, name: str) -> np.ndarray:
        return self.array()[:, self.columns.index(name)]

    def to_csv(self) -> str:
        return format_csv(self.columns, self.rows, "%.9g")

    def est_inputs_csv(self) -> str:
        return format_csv(EST_INPUT_COLUMNS, self.est_inputs, "%.17g")


def format_csv(columns, rows, fmt: str) -> str:
    out = io.StringIO()
    out.write(",".join(columns) + "\n")
    for r in rows:
        out.write(",".join(fmt % v for v in r) + "\n")
    return out.getvalue()


def read_csv(path) -> tuple:
    with open(path, encoding="ascii") as fh:
        header = fh.readline().rstrip("\n").split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2) if fh.readable() else np.zeros((0, len(header)))
    return header, data


class Runner:
    """One scenario, stepped at the physics rate with decimated control and estimation."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        self.body = sc.body
        self.arm = sc.arm
        self.env = sc.make_environment()
        self.ext_force = sc.constant_force()
        self.rng = np.random.default_rng(sc.seed)
        self.dt = 1.0 / sc.physics_rate
        self.ctrl_dec = int(round(sc.physics_rate / sc.control_rate))
        self.est_dec = int(round(sc.physics_rate / sc.estimator_rate))
        self.ctrl_dt = self.ctrl_dec * self.dt

        x0, psi0 = sc.start_pose()
        self.state = VehicleState(x=x0, R=rot_z(psi0))
        self.psi0 = psi0
        self.ctrl = PpidController(sc.gains, self.body)
        self.estimator = ForceEstimator(self.body, self.arm, sc.filters)
        self.est = self.estimator.last
        self.trace = Trace()

        self.f_cmd = self.body.m * self.body.g
        self.tau_cmd = np.zeros(3)
        self.setpoint = Setpoint(x0.copy(), psi0)
        self.mode = select_mode(sc.mission)

        # period accumulators feeding the estimator
        self.acc_dv = np.zeros(3)
        self.acc_tau = np.zeros(3)
        self.acc_gyro = np.zeros(3)
        self.acc_f = 0.0
        self.acc_n = 0

        self.contact_force = np.zeros(3)
        self.contact_tz = 0.0
        self.n_contacts = 0
        self.impacts_in_period = 0

        self.explorer = None
        self.cloud = None
        if sc.mission == "EXPLORE_MAP":
            self.explorer = Explorer(sc.explorer, sc.admittance, psi0)
            self.force_avg = MovingAverage(sc.explorer.force_window)
            self.yaw_lpf = LowPass(sc.explorer.yaw_rate_cutoff, self.ctrl_dt)
            self.cloud = MapCloud(meta={"scenario": sc.name})
            self.map_lam = self.explorer.state.lam
            self.first_contact = None
            self.travel = 0.0
            self.last_pos = x0[:2].copy()
            self.loop_closed = False
            self.force_b = np.zeros(3)
        self.map_emit = 0
        self.adm = Admittance(sc.admittance) if sc.mission == "STATIC_WRENCH" else None
        self.target = np.array([*sc.target, -sc.altitude]) if sc.target is not None else x0.copy()
        if sc.mission == "COB":
            self._setup_cob()

    # -- missions ---------------------------------------------------------------

    def _setup_cob(self) -> None:
        cfg = self.sc.cob
        x0 = self.state.x[0]
        wall_contact = cfg.wall
        prob = cob.CobProblem(start=(x0, 0.0), goal=cfg.goal, wall=wall_contact, a_max=cfg.a_max,
                              v_max=cfg.v_max, e=cfg.e)
        plan = cob.choose_plan(prob) if cfg.kind == "AUTO" else cob.plan_of_kind(prob, cfg.kind)
        self.cob_plan = plan
        self.cob_problem = prob
        self.cob_hit = None
        goal = np.array([cfg.goal, self.state.x[1], -self.sc.altitude])
        self.cob_goal = goal
        if plan.kind == cob.NO_COLLISION:
            self.setpoint = Setpoint(goal, self.psi0)
        else:
            # aim past the wall so the craft arrives at full speed
            aim = goal.copy()
            aim[0] = wall_contact + cfg.v_max / float(self.sc.gains.pos_p[0]) + 0.5
            self.setpoint = Setpoint(aim, self.psi0)

    def _cob_control(self, t: float, impacted: bool, v_pre) -> None:
        if self.cob_plan.kind == cob.NO_COLLISION or self.cob_hit is not None or not impacted:
            return
        self.cob_hit = t
        pose = self.state.x.copy()
        v = np.array([v_pre[0], 0.0, 0.0])
        if self.cob_plan.kind == cob.COLLIDE_TO_STOP:
            c = 0.0
        else:
            c = max(0.0, (pose[0] - self.cob_goal[0]) / max(abs(v[0]), 1e-9))
        sp = recovery_setpoint(v, pose, c, self.psi0)
        sp.r_d[1:] = self.cob_goal[1:]
        self.setpoint = sp
        self.mode = Mode.YIELD
        self.ctrl.reset_integrators()

    def _ff(self, delta_des) -> np.ndarray:
        return self.sc.force_ff_gain * np.asarray(delta_des, dtype=float)

    def _static_wrench(self) -> None:
        est = self.est
        r_d, psi_d = self.adm.step(est.fused, est.yaw_torque, self.target, self.psi0, self.ctrl_dt,
                                   delta_f_des=self.sc.force)
        self.setpoint = Setpoint(r_d, psi_d, r_d_star=self.target.copy(), psi_d_star=self.psi0,
                                 mode=Mode.STATIC_WRENCH, force_ff=self._ff(self.sc.force))

    def _explore(self, t: float) -> None:
        s = self.state
        ex = self.explorer
        yaw_rate = self.yaw_lpf(float((s.R @ s.Omega)[2]))
        g0 = ex.state.gamma
        out = ex.step(t, s.x, yaw_of(s.R), yaw_rate, self.force_b, self.est.yaw_torque, self.ctrl_dt)
        if out.gamma == TURNING and g0 != TURNING:
            # the contact that was averaged has just ended; start the window afresh
            self.force_avg.buf.clear()
            self.force_b = np.zeros(3)
        ff = rot_z(ex.state.psi_sp) @ out.delta_f_des_body
        self.setpoint = Setpoint(out.setpoint, out.psi_sp, mode=Mode.STATIC_WRENCH, force_ff=self._ff(ff))

        st = ex.state
        pos = s.x[:2]
        if st.gamma == TRAVERSAL and st.contacted and self.first_contact is None:
            self.first_contact = pos.copy()
            self.travel = 0.0
        self.travel += float(np.linalg.norm(pos - self.last_pos))
        self.last_pos = pos.copy()
        if (self.first_contact is not None and not self.loop_closed
                and self.travel > self.sc.loop_min_travel
                and np.linalg.norm(pos - self.first_contact) <= self.body.footprint_radius):
            self.loop_closed = True
            self.trace.events.append((t, "LOOP_CLOSURE", float(pos[0]), float(pos[1])))

    def _map_tick(self) -> None:
        st = self.explorer.state
        self.map_emit = 0
        if not st.contacted:
            self.map_lam = st.lam
            return
        if st.gamma != TRAVERSAL:
            return
        # the gate sees the latest estimate, not the explorer's one-second average
        force = -world_to_body(self.est.fused, rot_z(yaw_of(self.state.R)))
        gate = mapping_gate(force, st.lam, self.map_lam, True, self.sc.mapping)
        if gate == Gate.SKIP:
            return
        psi = st.psi_sp
        if gate == Gate.EMIT_CORNER:
            block = emit_block(self.state.x, psi, st.C_n, gate, self.sc.mapping, self.map_lam, st.lam)
            self.map_lam = st.lam
            if self.cloud.add(block, self.sc.mapping):
                self.map_emit = 2
        elif st.since_turn >= self.explorer.params.turn_refractory:
            # heading is still settling onto the new face right after a turn
            block = emit_block(self.state.x, psi, st.C_n, gate, self.sc.mapping)
            if self.cloud.add(block, self.sc.mapping):
                self.map_emit = 1

    # -- main loop --------------------------------------------------------------

    def _estimator_tick(self, step: int) -> None:
        s = self.state
        T = self.acc_n * self.dt
        acc = self.acc_dv / T + self.rng.normal(0.0, self.sc.accel_std, 3) if self.sc.accel_std > 0 \
            else self.acc_dv / T
        raw = s.theta + (self.rng.normal(0.0, self.sc.theta_std, 4) if self.sc.theta_std > 0 else 0.0)
        tau = self.acc_tau / self.acc_n
        gyro = self.acc_gyro / self.acc_n
        f_norm = self.acc_f / self.acc_n / self.estimator.thrust_scale
        self.est = self.estimator.update(raw, acc, f_norm, s.R, s.Omega, tau, gyro)
        self.trace.est_inputs.append([step, *raw, *acc, f_norm, *s.R.ravel(), *s.Omega, *tau, *gyro])
        self.acc_dv[:] = 0.0
        self.acc_tau[:] = 0.0
        self.acc_gyro[:] = 0.0
        self.acc_f = 0.0
        self.acc_n = 0
        if self.explorer is not None:
            self.force_b = self.force_avg(-world_to_body(self.est.fused, rot_z(yaw_of(s.R))))

    def _control_tick(self, step: int, t: float, v_pre_impact) -> None:
        sc = self.sc
        if sc.mission == "EXPLORE_MAP":
            self._explore(t)
        elif sc.mission == "STATIC_WRENCH":
            self._static_wrench()
        elif sc.mission == "COB":
            self._cob_control(t, v_pre_impact is not None, v_pre_impact)
        else:
            self.setpoint = Setpoint(self.target, self.psi0)
        self.f_cmd, R_des = self.ctrl.position(self.state, self.setpoint, self.ctrl_dt)
        self.tau_cmd = self.ctrl.attitude(self.state, R_des, self.ctrl_dt)

    def _pose_for_control(self):
        return self.state

    def run(self) -> Trace:
        sc = self.sc
        n_steps = int(round(sc.duration * sc.physics_rate))
        rows = self.trace.rows
        map_period = sc.control_rate / sc.map_rate
        ctrl_count = 0
        next_map = 0.0
        est_ticked = 0
        v_pre_impact = None
        for k in range(n_steps):
            t = k * self.dt
            if k % self.est_dec == 0 and self.acc_n > 0:
                self._estimator_tick(k)
                est_ticked = 1
            if k % self.ctrl_dec == 0:
                self._control_tick(k, t, v_pre_impact)
                v_pre_impact = None
                if self.explorer is not None:
                    self.map_emit = 0
                    if ctrl_count >= next_map:
                        next_map += map_period
                        self._map_tick()
                self._log(k, t, est_ticked)
                est_ticked = 0
                ctrl_count += 1
                self.impacts_in_period = 0
                if self.explorer is not None and self.loop_closed and sc.stop_on_loop:
                    break
            v_before = self.state.v.copy()
            impacted = self._physics_step(k)
            if impacted and v_pre_impact is None:
                v_pre_impact = v_before
        self.trace.cloud = self.cloud
        if self.explorer is not None:
            self.trace.transitions = list(self.explorer.transitions)
        return self.trace

    def _physics_step(self, k: int) -> bool:
        s = self.state
        body, arm, env, dt = self.body, self.arm, self.env, self.dt
        events = detect_contacts(s, env, body) if env.obstacles else []
        n_imp = 0
        if events:
            s, n_imp = apply_impacts(s, events, env, body, arm)
            if n_imp:
                events = detect_contacts(s, env, body)
            F, tau_c, loads = contact_wrench(s, events, env, body)
        else:
            F, tau_c, loads = np.zeros(3), np.zeros(3), np.zeros(4)
        self.contact_force = F
        self.contact_tz = float(tau_c[2])
        self.n_contacts = len(events)
        self.impacts_in_period += n_imp
        ext = F + self.ext_force if k * dt >= self.sc.external_start else F
        v0 = s.v
        new = step_rigid_body(s, self.f_cmd, self.tau_cmd, (ext, tau_c), dt, body)
        th, thd = new.theta, new.theta_dot
        for i in range(4):
            th[i], thd[i] = step_arm(float(s.theta[i]), float(s.theta_dot[i]), arm, float(loads[i]) * arm.l, dt)
        if not (np.all(np.isfinite(new.x)) and np.all(np.isfinite(new.v)) and abs(new.x[2]) < 1e3):
            raise SimulationError(f"non-finite state at physics step {k} (trace row {len(self.trace.rows)})")
        Om = s.Omega
        self.acc_dv += new.v - v0
        self.acc_tau += self.tau_cmd
        self.acc_gyro += np.cross(body.H @ Om, Om)
        self.acc_f += self.f_cmd
        self.acc_n += 1
        self.state = new
        return n_imp > 0

    def _log(self, k: int, t: float, est_tick: int) -> None:
        s, e = self.state, self.est
        sp = self.setpoint
        if self.explorer is not None:
            st = self.explorer.state
            exp = [st.gamma, *st.C_n, LAMBDA_CODE[st.lam], LAMBDA_CODE[st.lam_prev], st.psi_sp, st.turn_accum,
                   self.map_emit, len(self.cloud.blocks), int(self.loop_closed)]
        else:
            exp = [0, 0, 0, 0, 0, 0, 0, 0.0, 0.0, 0, 0, 0]
        arm_sum = e.per_arm.sum(axis=0)
        self.trace.rows.append([
            t, k, est_tick, *s.x, *s.v, *s.R.ravel(), *s.Omega, *s.theta, *s.theta_dot,
            self.f_cmd, *self.tau_cmd, *sp.r_d, sp.psi_d, MODE_CODE[self.mode if self.sc.mission == "COB"
                                                                    else sp.mode],
            *e.com, *arm_sum, *e.fused, *e.body, e.upsilon, e.yaw_torque, *e.kappa,
            *self.contact_force, self.contact_tz, self.n_contacts, self.impacts_in_period, *exp,
        ])


def run(sc: Scenario) -> Trace:
    return Runner(sc).run()


# --- reports -----------------------------------------------------------------


def dwell_times(trace: Trace, dt: float) -> dict:
    g = trace.col("gamma")
    return {k: float(np.sum(g == k) * dt) for k in (EXPLORATION, TURNING, TRAVERSAL)}


def report(trace: Trace, sc: Scenario) -> dict:
    out = {"scenario": sc.name, "mission": sc.mission, "rows": len(trace.rows)}
    A = trace.array()
    if len(A) == 0:
        return out
    ctrl_dt = 1.0 / sc.control_rate
    out["duration"] = float(A[-1, 0] + ctrl_dt)
    if sc.mission == "EXPLORE_MAP":
        out["dwell"] = dwell_times(trace, ctrl_dt)
        closed = np.nonzero(trace.col("loop_closed") > 0)[0]
        out["loop_closure"] = float(A[closed[0], 0]) if len(closed) else None
        out["blocks"] = int(trace.col("map_blocks")[-1])
        m = map_metrics(trace.cloud, sc.make_environment(), sc.mapping) if trace.cloud is not None else None
        if m is not None and len(sc.make_environment().obstacles) == 1:
            out["est_dims"] = m.est_dims
            out["area_accuracy"] = m.area_accuracy
            out["hausdorff"] = m.hausdorff
    ticks = A[A[:, trace.columns.index("est_tick")] > 0]
    if len(ticks):
        err = ticks[:, [trace.columns.index(c) for c in ("fused_x", "fused_y")]] \
            - ticks[:, [trace.columns.index(c) for c in ("contact_fx", "contact_fy")]]
        out["fused_rmse_xy"] = float(np.sqrt(np.mean(np.sum(err**2, axis=1))))
    if sc.mission in ("STATIC_WRENCH", "HOVER", "COB"):
        tail = A[A[:, 0] >= 0.7 * A[-1, 0]]
        cf = tail[:, [trace.columns.index(c) for c in ("contact_fx", "contact_fy")]]
        fu = tail[:, [trace.columns.index(c) for c in ("fused_x", "fused_y", "fused_z")]]
        out["steady_contact_force"] = float(np.linalg.norm(cf.mean(axis=0)))
        out["steady_fused"] = [float(v) for v in fu.mean(axis=0)]
    if sc.mission == "COB":
        t = A[:, 0]
        x = A[:, trace.columns.index("x")]
        x0 = x[0]
        m = cob.measure_metrics(t, x, x0, sc.cob.goal)
        out["cob_kind"] = sc.cob.kind
        out["cob_tau_r"], out["cob_tau_s"], out["cob_rmse"] = m.tau_r, m.tau_s, m.rmse
    return out


def trace_from_csv(path) -> Trace:
    header, data = read_csv(path)
    if header != list(COLUMNS):
        raise ValueError(f"{path}: unexpected trace header")
    return Trace(rows=[list(r) for r in data])


def format_report(rep: dict) -> str:
    lines = []
    for k, v in rep.items():
        if isinstance(v, dict):
            lines.append(f"{k}:")
            lines += [f"  {kk}: {vv:.6g}" if isinstance(vv, float) else f"  {kk}: {vv}" for kk, vv in v.items()]
        elif isinstance(v, float):
            lines.append(f"{k}: {v:.6g}")
        elif isinstance(v, (list, tuple)):
            lines.append(f"{k}: " + " ".join(f"{x:.6g}" for x in v))
        else:
            lines.append(f"{k}: {v}")
    return "\n".join(lines) + "\n"


def write_artifacts(trace: Trace, sc: Scenario, outdir) -> dict:
    os.makedirs(outdir, exist_ok=True)
    base = os.path.join(outdir, sc.name)
    paths = {"trace": base + ".trace.csv", "est_inputs": base + ".estin.csv", "report": base + ".report.txt",
             "scenario": base + ".scenario.txt"}
    with open(paths["scenario"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(sc.source_text)
    with open(paths["trace"], "w", encoding="ascii", newline="\n") as fh:
        fh.write(trace.to_csv())
    with open(paths["est_inputs"], "w", encoding="ascii", newline="\n") as fh:
        fh.write(trace.est_inputs_csv())
    with open(paths["report"], "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_report(report(trace, sc)))
    if trace.cloud is not None:
        paths["ply"] = base + ".ply"
        write_ply(trace.cloud, paths["ply"])
    return paths


REPLAY_COLUMNS = ("fused_x", "fused_y", "fused_z", "com_x", "com_y", "com_z", "yaw_torque")


def replay_estimates(sc: Scenario, est_rows) -> dict:
    """Feed logged estimator inputs through a fresh estimator; step -> replayed values."""
    sc.validate()
    est = ForceEstimator(sc.body, sc.arm, sc.filters)
    out = {}
    for r in np.asarray(est_rows, dtype=float).reshape(-1, len(EST_INPUT_COLUMNS)):
        raw, acc, f_norm = r[1:5], r[5:8], r[8]
        R = r[9:18].reshape(3, 3)
        Omega, tau, gyro = r[18:21], r[21:24], r[24:27]
        e = est.update(raw, acc, f_norm, R, Omega, tau, gyro)
        out[int(r[0])] = (*e.fused, *e.com, e.yaw_torque)
    return out


def verify_replay(sc: Scenario, trace_path, est_path) -> tuple:
    """Compare replayed estimates with a written trace at its own text precision.

    Returns (rows checked, list of mismatching steps).
    """
    header, data = read_csv(est_path)
    if header != list(EST_INPUT_COLUMNS):
        raise ValueError(f"{est_path}: unexpected estimator-input header")
    replay = replay_estimates(sc, data)
    with open(trace_path, encoding="ascii") as fh:
        cols = fh.readline().rstrip("\n").split(",")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    idx = [cols.index(c) for c in REPLAY_COLUMNS]
    i_step, i_tick = cols.index("step"), cols.index("est_tick")
    checked, bad = 0, []
    for row in rows:
        if row[i_tick] != "1":
            continue
        step = int(row[i_step])
        vals = replay.get(step)
        checked += 1
        if vals is None or any("%.9g" % v != row[i] for v, i in zip(vals, idx)):
            bad.append(step)
    return checked, bad
