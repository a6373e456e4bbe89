"""Independent reference computations shared by the unit and acceptance tests."""

import math

import numpy as np


def brute_force_rest_to_rest(d, a, v_max=math.inf, dt=1e-3, max_steps=200_000):
    """Shortest time on a dt grid for which some admissible control covers d.

    Controls are piecewise constant over dt with |u| <= a. Velocities are kept
    on the lattice k*a*dt plus the level v_max itself, so a cruise at exactly
    v_max is reachable. For each step count the best distance ending at rest is
    found by dynamic programming; the answer is the first count that reaches d.
    """
    step = a * dt
    cap = int(math.floor(v_max / step + 1e-9)) if math.isfinite(v_max) else max_steps
    top = v_max if math.isfinite(v_max) and v_max - cap * step > 1e-12 else None
    lat = np.arange(cap + 2) * step
    mid = 0.5 * dt * (lat[:-1] + lat[1:])  # distance of a step between neighbouring levels
    B = np.full(cap + 2, -np.inf)  # padded by one unreachable level
    B[0] = 0.0
    T = -np.inf  # best distance sitting at the v_max level
    for n in range(1, max_steps + 1):
        m = min(n, cap) + 1
        old_top = B[cap] if top is not None else -np.inf
        stay = B[:m] + dt * lat[:m]
        up = np.full(m, -np.inf)
        up[1:] = B[: m - 1] + mid[: m - 1]
        down = B[1 : m + 1] + mid[:m]
        new = np.maximum(np.maximum(stay, up), down)
        if top is not None and m > cap:
            # v_max sits less than one step above the top lattice level
            hop = 0.5 * dt * (top + lat[cap])
            new[cap] = max(new[cap], T + hop)
            T = max(T + dt * top, old_top + hop)
        B[:m] = new
        if B[0] >= d - 1e-12:
            return n * dt
    raise RuntimeError("horizon too short")


def second_order_step(t, zeta, wn):
    """Unit step response of an underdamped second-order system."""
    wd = wn * math.sqrt(1 - zeta**2)
    phi = math.acos(zeta)
    return 1 - np.exp(-zeta * wn * t) * np.sin(wd * t + phi) / math.sqrt(1 - zeta**2)


def second_order_times(zeta, wn, rise=0.9, band=0.05):
    """Rise and settling times of second_order_step found by root bracketing."""
    from scipy.optimize import brentq
    f = lambda t: second_order_step(np.array([t]), zeta, wn)[0]
    wd = wn * math.sqrt(1 - zeta**2)
    tp = math.pi / wd
    tau_r = brentq(lambda t: f(t) - rise, 1e-9, tp)
    # the last band exit happens at a crossing of 1 +/- band between two extrema
    tau_s = brentq(lambda t: f(t) - (1 - band), 1e-9, tp)
    k = 1
    while True:
        lo, hi = k * math.pi / wd, (k + 1) * math.pi / wd
        ext = f(lo) - 1
        if abs(ext) <= band:
            break
        level = 1 + math.copysign(band, ext)
        tau_s = brentq(lambda t: f(t) - level, lo, hi)
        k += 1
    return tau_r, tau_s
