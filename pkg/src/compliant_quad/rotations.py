"""Small SO(3) helpers shared by the simulator, estimator and controllers.

Frames follow a z-down convention: gravity acts along +e3 and thrust along -b3.
"""

from __future__ import annotations

import math

import numpy as np

E3 = np.array([0.0, 0.0, 1.0])


def hat(w: np.ndarray) -> np.ndarray:
    x, y, z = float(w[0]), float(w[1]), float(w[2])
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(S: np.ndarray) -> np.ndarray:
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def expm_so3(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula for exp(hat(w))."""
    theta = math.sqrt(float(w @ w))
    K = hat(w)
    if theta < 1e-9:
        return np.eye(3) + K + 0.5 * (K @ K)
    return np.eye(3) + (math.sin(theta) / theta) * K + ((1.0 - math.cos(theta)) / theta**2) * (K @ K)


def log_so3(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R (inverse of expm_so3), valid away from angle pi."""
    c = max(-1.0, min(1.0, 0.5 * (float(np.trace(R)) - 1.0)))
    theta = math.acos(c)
    skew = vee(R - R.T)
    if theta < 1e-7:
        return 0.5 * skew
    if math.pi - theta < 1e-6:
        # axis from the symmetric part
        B = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        i = int(np.argmax(axis))
        axis = B[:, i] / math.sqrt(B[i, i])
        return theta * axis / np.linalg.norm(axis)
    return theta / (2.0 * math.sin(theta)) * skew


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Gram-Schmidt on the columns, keeping a right-handed frame."""
    c0 = R[:, 0]
    c0 = c0 / math.sqrt(float(c0 @ c0))
    c1 = R[:, 1] - (c0 @ R[:, 1]) * c0
    c1 = c1 / math.sqrt(float(c1 @ c1))
    c2 = np.cross(c0, c1)
    out = np.empty((3, 3))
    out[:, 0] = c0
    out[:, 1] = c1
    out[:, 2] = c2
    return out


def yaw_of(R: np.ndarray) -> float:
    return math.atan2(R[1, 0], R[0, 0])


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def orthonormality_error(R: np.ndarray) -> float:
    return float(np.max(np.abs(R.T @ R - np.eye(3))))
