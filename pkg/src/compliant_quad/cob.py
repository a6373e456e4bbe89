"""One-dimensional minimum-time maneuvers with and without a deliberate wall impact.

Plans are lists of constant-acceleration segments; a JUMP segment has zero
duration and maps the velocity v to -e*v at the wall.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

NO_COLLISION = "NO_COLLISION"
COLLIDE_TO_STOP = "COLLIDE_TO_STOP"
COLLIDE_TO_DECELERATE = "COLLIDE_TO_DECELERATE"
JUMP = "JUMP"


class CobInfeasible(ValueError):
    pass


@dataclass
class CobProblem:
    start: tuple
    goal: float
    wall: float = None
    a_max: float = 2.0
    v_max: float = math.inf
    e: float = 0.09

    def __post_init__(self) -> None:
        self.start = (float(self.start[0]), float(self.start[1]))
        if self.a_max <= 0 or self.v_max <= 0:
            raise ValueError("a_max and v_max must be positive")
        if not 0 <= self.e < 1:
            raise ValueError("restitution must satisfy 0 <= e < 1")
        if abs(self.start[1]) > self.v_max:
            raise ValueError("start speed exceeds v_max")
        if self.wall is not None:
            x0 = self.start[0]
            d_goal, d_wall = self.goal - x0, self.wall - x0
            if d_wall == 0 or d_goal * d_wall < 0 or abs(d_goal) > abs(d_wall):
                raise ValueError("wall must lie between start and goal (or at the goal)")


@dataclass
class Segment:
    accel: float
    duration: float
    jump: bool = False


@dataclass
class CobPlan:
    segments: list = field(default_factory=list)
    total_time: float = 0.0
    kind: str = NO_COLLISION
    jump_velocity: tuple = None


def _rest_to_rest(d: float, a: float, v_max: float) -> list:
    """Segments covering distance d >= 0 from rest to rest."""
    if d <= 0.0:
        return []
    vp = math.sqrt(a * d)
    if vp <= v_max:
        return [Segment(a, vp / a), Segment(-a, vp / a)]
    t1 = v_max / a
    return [Segment(a, t1), Segment(0.0, d / v_max - t1), Segment(-a, t1)]


def bang_bang_time(d: float, a_max: float, v_max: float = math.inf) -> tuple:
    """Minimum rest-to-rest time over distance d and the switch schedule."""
    if d < 0 or a_max <= 0 or v_max <= 0:
        raise ValueError("need d >= 0 and positive limits")
    segs = _rest_to_rest(d, a_max, v_max)
    return sum(s.duration for s in segs), segs


def min_time_to_rest(x0: float, v0: float, xf: float, a: float, v_max: float = math.inf) -> list:
    """Bang-bang segments from (x0, v0) to (xf, 0) with |v| <= v_max."""
    d = xf - x0
    if d < 0:
        return [Segment(-s.accel, s.duration) for s in min_time_to_rest(-x0, -v0, -xf, a, v_max)]
    if v0 < 0:
        # brake to rest first; the braking arc and the next acceleration share a sign
        return [Segment(a, -v0 / a)] + _rest_to_rest(d + v0 * v0 / (2 * a), a, v_max)
    stop = v0 * v0 / (2 * a)
    if stop > d:
        return [Segment(-a, v0 / a)] + [Segment(-s.accel, s.duration) for s in _rest_to_rest(stop - d, a, v_max)]
    vp = math.sqrt(a * d + 0.5 * v0 * v0)
    if vp <= v_max:
        return [Segment(a, (vp - v0) / a), Segment(-a, vp / a)]
    d1 = (v_max**2 - v0 * v0) / (2 * a)
    d3 = v_max**2 / (2 * a)
    return [Segment(a, (v_max - v0) / a), Segment(0.0, (d - d1 - d3) / v_max), Segment(-a, v_max / a)]


def _finish(segs: list, kind: str, jump_velocity=None) -> CobPlan:
    segs = [s for s in segs if s.jump or s.duration > 0]
    return CobPlan(segs, float(sum(s.duration for s in segs)), kind, jump_velocity)


def no_collision_plan(p: CobProblem) -> CobPlan:
    return _finish(min_time_to_rest(p.start[0], p.start[1], p.goal, p.a_max, p.v_max), NO_COLLISION)


def collide_plan(p: CobProblem) -> CobPlan:
    if p.wall is None:
        raise CobInfeasible("collide plan needs a wall")
    x0, v0 = p.start
    sgn = 1.0 if p.wall > x0 else -1.0
    D = abs(p.wall - x0)
    u = sgn * v0
    a, vm = p.a_max, p.v_max
    v_w = math.sqrt(u * u + 2 * a * D)
    segs = []
    if v_w <= vm:
        segs.append(Segment(sgn * a, (v_w - u) / a))
    else:
        v_w = vm
        d1 = (vm * vm - u * u) / (2 * a)
        segs += [Segment(sgn * a, (vm - u) / a), Segment(0.0, (D - d1) / vm)]
    v_minus = sgn * v_w
    v_plus = -p.e * v_minus
    segs.append(Segment(0.0, 0.0, jump=True))
    kind = COLLIDE_TO_STOP if abs(p.goal - p.wall) <= 1e-12 else COLLIDE_TO_DECELERATE
    segs += min_time_to_rest(p.wall, v_plus, p.goal, a, vm)
    return _finish(segs, kind, (v_minus, v_plus))


def plan_of_kind(p: CobProblem, kind: str) -> CobPlan:
    if kind == NO_COLLISION:
        return no_collision_plan(p)
    plan = collide_plan(p)
    if plan.kind != kind:
        raise CobInfeasible(f"geometry gives {plan.kind}, not {kind}")
    return plan


def choose_plan(p: CobProblem) -> CobPlan:
    base = no_collision_plan(p)
    if p.wall is None:
        return base
    hit = collide_plan(p)
    return hit if hit.total_time < base.total_time else base


def simulate_plan(plan: CobPlan, x0: float, v0: float, e: float = None, dt: float = 1e-3) -> tuple:
    """Sampled (t, x, v) of a plan, integrated exactly between samples."""
    if e is None:
        e = 0.0 if plan.jump_velocity is None or plan.jump_velocity[0] == 0 else \
            -plan.jump_velocity[1] / plan.jump_velocity[0]
    ts, xs, vs = [0.0], [x0], [v0]
    t, x, v = 0.0, x0, v0
    for s in plan.segments:
        if s.jump:
            v = -e * v
            ts.append(t)
            xs.append(x)
            vs.append(v)
            continue
        n = max(1, int(math.ceil(s.duration / dt)))
        for k in range(1, n + 1):
            h = s.duration * k / n
            ts.append(t + h)
            xs.append(x + v * h + 0.5 * s.accel * h * h)
            vs.append(v + s.accel * h)
        x += v * s.duration + 0.5 * s.accel * s.duration**2
        v += s.accel * s.duration
        t += s.duration
    return np.array(ts), np.array(xs), np.array(vs)


def phase_portrait_csv(plan: CobPlan, x0: float, v0: float, dt: float = 1e-2) -> str:
    t, x, v = simulate_plan(plan, x0, v0, dt=dt)
    out = io.StringIO()
    out.write("t,x,v\n")
    for row in zip(t, x, v):
        out.write(",".join("%.9g" % c for c in row) + "\n")
    return out.getvalue()


# --- maneuver metrics ---------------------------------------------------------


@dataclass
class ManeuverMetrics:
    tau_r: float
    tau_s: float
    rmse: float


def measure_metrics(t, x, x0: float, goal: float, rise: float = 0.9, band: float = 0.05) -> ManeuverMetrics:
    """Rise time, settling time and post-settling RMSE of a step response.

    ``tau_s`` is None when the trace ends outside the band; ``tau_r`` is None
    when the rise threshold is never reached.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    step = goal - x0
    if step == 0:
        raise ValueError("step reference must be non-zero")
    y = (x - x0) / step
    hit = np.nonzero(y >= rise)[0]
    tau_r = float(t[hit[0]]) if len(hit) else None
    out = np.nonzero(np.abs(y - 1.0) > band)[0]
    if len(out) == 0:
        tau_s = float(t[0])
    elif out[-1] == len(y) - 1:
        tau_s = None
    else:
        tau_s = float(t[out[-1] + 1])
    rmse = None
    if tau_s is not None:
        tail = x[t >= tau_s] - goal
        rmse = float(np.sqrt(np.mean(tail**2)))
    return ManeuverMetrics(tau_r, tau_s, rmse)
