"""External force estimation from arm deflections and CoM acceleration.

Per-arm forces come from inverting the hinge spring (k * theta / l) and
passing it through a first-order observer. The CoM route rearranges the
translational dynamics. An indicator on summed arm deflection selects
between the two, and a rate-adaptive gain keeps the CoM peak during impacts.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .rotations import E3
from .simcore import ArmParams, BodyParams, arm_deflection_angle, arm_rotation

THRUST_SCALE = 32.5


@dataclass
class FilterBank:
    median_window: int = 5
    lpf_alpha: float = 0.5
    bandstop_center: float = 7.0
    bandstop_width: float = 4.0
    bandstop_enabled: bool = True
    rate: float = 50.0
    K_I: float = 20.0
    xi_f: float = 0.02
    theta_th: float = 0.035
    accel_median_window: int = 3
    accel_lpf_alpha: float = 0.6
    K_o: float = 10.0

    def __post_init__(self) -> None:
        for w in (self.median_window, self.accel_median_window):
            if w < 1 or w % 2 == 0:
                raise ValueError("median windows must be odd and >= 1")
        for a in (self.lpf_alpha, self.accel_lpf_alpha):
            if not 0 < a <= 1:
                raise ValueError("low-pass coefficients must lie in (0, 1]")
        if min(self.K_I, self.xi_f, self.theta_th, self.K_o, self.rate) <= 0:
            raise ValueError("K_I, xi_f, theta_th, K_o and rate must be positive")
        if self.bandstop_enabled and not 0 < self.bandstop_center < self.rate / 2:
            raise ValueError("band-stop center must lie below Nyquist")

    def notch_coefficients(self):
        q = self.bandstop_center / self.bandstop_width
        return signal.iirnotch(self.bandstop_center, q, fs=self.rate)

    def group_delay(self) -> dict:
        """Low-frequency group delay of each stage, in samples."""
        out = {
            "median": (self.median_window - 1) / 2,
            "lowpass": (1.0 - self.lpf_alpha) / self.lpf_alpha,
            "bandstop": 0.0,
        }
        if self.bandstop_enabled:
            b, a = self.notch_coefficients()
            _, gd = signal.group_delay((b, a), w=[1e-6])
            out["bandstop"] = float(gd[0])
        out["total"] = out["median"] + out["lowpass"] + out["bandstop"]
        return out


class SignalChain:
    """Streaming median -> first-order low-pass -> optional notch for one channel."""

    def __init__(self, median_window: int, alpha: float, notch=None):
        self.window = deque(maxlen=median_window)
        self.alpha = alpha
        self.y = None
        self.last_valid = 0.0
        self.nan_count = 0
        if notch is not None:
            b, a = notch
            self.b = np.asarray(b, dtype=float) / a[0]
            self.a = np.asarray(a, dtype=float) / a[0]
        else:
            self.b = None
        self.z1 = 0.0
        self.z2 = 0.0
        self.primed = False

    def __call__(self, x: float) -> float:
        if not math.isfinite(x):
            self.nan_count += 1
            x = self.last_valid
        else:
            self.last_valid = x
        self.window.append(x)
        med = float(np.median(self.window)) if len(self.window) > 1 else x
        self.y = med if self.y is None else self.y + self.alpha * (med - self.y)
        if self.b is None:
            return self.y
        b0, b1, b2 = self.b
        _, a1, a2 = self.a
        if not self.primed:
            # start the notch in steady state at the first input
            self.z1 = self.y * (1.0 - b0)
            self.z2 = self.y * (b2 - a2)
            self.primed = True
        u = self.y
        out = b0 * u + self.z1
        self.z1 = b1 * u - a1 * out + self.z2
        self.z2 = b2 * u - a2 * out
        return out


def make_arm_chains(bank: FilterBank) -> list:
    notch = bank.notch_coefficients() if bank.bandstop_enabled else None
    return [SignalChain(bank.median_window, bank.lpf_alpha, notch) for _ in range(4)]


def filter_arm_angles(raw_theta, bank: FilterBank) -> np.ndarray:
    """Filter a (samples, 4) stream of raw arm angles sampled at ``bank.rate``."""
    raw = np.atleast_2d(np.asarray(raw_theta, dtype=float))
    chains = make_arm_chains(bank)
    out = np.empty_like(raw)
    for k, row in enumerate(raw):
        for i in range(raw.shape[1]):
            out[k, i] = chains[i](float(row[i]))
    return out


def spring_force(theta_i: float, params: ArmParams) -> float:
    """Quasi-static arm-normal force that holds the spring at theta_i."""
    return params.k * theta_i / params.l


def estimate_arm_force(theta_i: float, prev_estimate: float, params: ArmParams, bank: FilterBank, dt: float) -> float:
    # exact discretisation of d/dt est = K_I (force - est)
    gain = 1.0 - math.exp(-bank.K_I * dt)
    return prev_estimate + gain * (spring_force(theta_i, params) - prev_estimate)


def arm_force_to_world(f_arm: float, i: int, theta_i: float, R: np.ndarray) -> np.ndarray:
    """Arm-frame normal force of arm i (1..4) expressed in the world frame."""
    R_arm = arm_rotation(arm_deflection_angle(i, theta_i))
    return R @ (R_arm @ np.array([f_arm, 0.0, 0.0]))


def estimate_com_force(
    accel_meas: np.ndarray, f_cmd_normalized: float, R: np.ndarray, body: BodyParams,
    thrust_scale: float = THRUST_SCALE,
) -> np.ndarray:
    f = thrust_scale * f_cmd_normalized
    return body.m * np.asarray(accel_meas, dtype=float) - body.m * body.g * E3 + f * R[:, 2]


def contact_indicator(theta, theta_th: float) -> int:
    return 1 if float(np.sum(np.abs(theta))) > theta_th else 0


def adaptive_gain(com_rate: np.ndarray, xi_f: float) -> np.ndarray:
    return np.clip(xi_f * np.abs(np.asarray(com_rate, dtype=float)), 0.0, 1.0)


def fuse_forces(com: np.ndarray, per_arm_sum: np.ndarray, upsilon: int, com_rate: np.ndarray, xi_f: float) -> np.ndarray:
    com = np.asarray(com, dtype=float)
    if upsilon == 0:
        return com.copy()
    kappa = adaptive_gain(com_rate, xi_f)
    return kappa * com + (1.0 - kappa) * np.asarray(per_arm_sum, dtype=float)


def world_to_body(force: np.ndarray, R: np.ndarray) -> np.ndarray:
    return R.T @ np.asarray(force, dtype=float)


class YawTorqueObserver:
    """First-order generalized-momentum observer for the external body torque.

    ``update`` takes the body rate at the end of the interval together with
    the applied torque and gyroscopic term averaged over that interval.
    """

    def __init__(self, H: np.ndarray, K_o: float, Omega0=None):
        self.H = np.asarray(H, dtype=float)
        self.K_o = K_o
        om = np.zeros(3) if Omega0 is None else np.asarray(Omega0, dtype=float)
        self.p0 = self.H @ om
        self.integral = np.zeros(3)
        self.estimate = np.zeros(3)

    def update(self, Omega: np.ndarray, tau_cmd: np.ndarray, dt: float, gyro=None) -> np.ndarray:
        Omega = np.asarray(Omega, dtype=float)
        if gyro is None:
            p = self.H @ Omega
            gyro = np.cross(p, Omega)
        self.integral += (np.asarray(tau_cmd, dtype=float) + gyro + self.estimate) * dt
        self.estimate = self.K_o * (self.H @ Omega - self.p0 - self.integral)
        return self.estimate

    @property
    def yaw(self) -> float:
        return float(self.estimate[2])


def yaw_torque_observer(Omega_seq, tau_seq, H, dt: float, K_o: float = 10.0) -> np.ndarray:
    """Batch form: yaw-torque estimates for aligned (Omega, tau) sequences."""
    obs = YawTorqueObserver(H, K_o)
    out = []
    for Om, tau in zip(Omega_seq, tau_seq):
        out.append(obs.update(Om, tau, dt)[2])
    return np.asarray(out)


@dataclass
class ForceEstimate:
    per_arm: np.ndarray = field(default_factory=lambda: np.zeros((4, 3)))
    com: np.ndarray = field(default_factory=lambda: np.zeros(3))
    fused: np.ndarray = field(default_factory=lambda: np.zeros(3))
    body: np.ndarray = field(default_factory=lambda: np.zeros(3))
    upsilon: int = 0
    yaw_torque: float = 0.0
    kappa: np.ndarray = field(default_factory=lambda: np.zeros(3))
    theta: np.ndarray = field(default_factory=lambda: np.zeros(4))


class ForceEstimator:
    """Stateful estimator fed one sample per estimator tick."""

    def __init__(self, body: BodyParams, arm: ArmParams, bank: FilterBank, thrust_scale: float = THRUST_SCALE):
        self.body = body
        self.arm = arm
        self.bank = bank
        self.thrust_scale = thrust_scale
        self.dt = 1.0 / bank.rate
        self.arm_chains = make_arm_chains(bank)
        self.acc_chains = [SignalChain(bank.accel_median_window, bank.accel_lpf_alpha) for _ in range(3)]
        self.thrust_chain = SignalChain(bank.accel_median_window, bank.accel_lpf_alpha)
        self.arm_est = np.zeros(4)
        self.prev_com = None
        self.observer = YawTorqueObserver(body.H, bank.K_o)
        self.last = ForceEstimate()

    @property
    def nan_count(self) -> int:
        return sum(c.nan_count for c in self.arm_chains)

    def update(
        self, raw_theta, accel_meas, f_cmd_normalized: float, R: np.ndarray, Omega: np.ndarray,
        tau_avg: np.ndarray, gyro_avg=None,
    ) -> ForceEstimate:
        theta = np.array([self.arm_chains[i](float(raw_theta[i])) for i in range(4)])
        per_arm = np.empty((4, 3))
        for i in range(4):
            self.arm_est[i] = estimate_arm_force(theta[i], self.arm_est[i], self.arm, self.bank, self.dt)
            per_arm[i] = arm_force_to_world(self.arm_est[i], i + 1, theta[i], R)

        acc = np.array([self.acc_chains[j](float(accel_meas[j])) for j in range(3)])
        f_norm = self.thrust_chain(float(f_cmd_normalized))
        com = estimate_com_force(acc, f_norm, R, self.body, self.thrust_scale)
        rate = np.zeros(3) if self.prev_com is None else (com - self.prev_com) / self.dt
        self.prev_com = com

        ups = contact_indicator(theta, self.bank.theta_th)
        fused = fuse_forces(com, per_arm.sum(axis=0), ups, rate, self.bank.xi_f)
        tau_hat = self.observer.update(Omega, tau_avg, self.dt, gyro_avg)
        self.last = ForceEstimate(
            per_arm=per_arm,
            com=com,
            fused=fused,
            body=world_to_body(fused, R),
            upsilon=ups,
            yaw_torque=float(tau_hat[2]),
            kappa=adaptive_gain(rate, self.bank.xi_f) if ups else np.zeros(3),
            theta=theta,
        )
        return self.last
