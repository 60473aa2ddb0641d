"""Minimal rigid-body math for training: rotations, the exponential map,
and cloud transforms.

Everything the trainer needs from SE(3) in one place: factored Euler
rotations for sampling poses and reading residuals, the twist exponential
for pose-perturbation losses, and point-cloud application with an optional
rotation pivot. Plain float64 functions, no state.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

# Below this rotation magnitude the closed-form Rodrigues coefficients are
# replaced by their Taylor expansions to avoid 0/0.
_SMALL_ANGLE = 1e-6


def rotation_x(angle: float) -> NDArray[np.float64]:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(angle: float) -> NDArray[np.float64]:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(angle: float) -> NDArray[np.float64]:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_xyz_to_matrix(angles) -> NDArray[np.float64]:
    """Compose R = rotation_x(a) @ rotation_y(b) @ rotation_z(c)."""
    a, b, c = np.asarray(angles, dtype=np.float64).reshape(3)
    return rotation_x(a) @ rotation_y(b) @ rotation_z(c)


def euler_xyz_from_matrix(R) -> NDArray[np.float64]:
    """Recover (a, b, c) with R = rotation_x(a) @ rotation_y(b) @ rotation_z(c).

    b lies in [-pi/2, pi/2]; at the |b| = pi/2 degeneracy c is pinned to 0 so
    the result stays deterministic.
    """
    R = np.asarray(R, dtype=np.float64)
    sb = float(np.clip(R[0, 2], -1.0, 1.0))
    b = float(np.arcsin(sb))
    if abs(sb) >= 1.0 - 1e-12:
        if sb > 0.0:
            a = float(np.arctan2(R[1, 0], R[1, 1]))
        else:
            a = float(np.arctan2(-R[1, 0], R[1, 1]))
        return np.array([a, b, 0.0])
    a = float(np.arctan2(-R[1, 2], R[2, 2]))
    c = float(np.arctan2(-R[0, 1], R[0, 0]))
    return np.array([a, b, c])


def skew(v) -> NDArray[np.float64]:
    x, y, z = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_se3(xi) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Exponential of a twist (omega, rho) as a (rotation, translation) pair.

    Rodrigues formula for the rotation; the translation goes through the left
    Jacobian so straight-line twists integrate exactly. Small angles use the
    series forms of the coefficients.
    """
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    omega, rho = xi[:3], xi[3:]
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    W2 = W @ W
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        A = 1.0 - t2 / 6.0
        B = 0.5 - t2 / 24.0
        C = 1.0 / 6.0 - t2 / 120.0
    else:
        A = np.sin(theta) / theta
        B = (1.0 - np.cos(theta)) / (theta * theta)
        C = (theta - np.sin(theta)) / (theta ** 3)
    R = np.eye(3) + A * W + B * W2
    J_l = np.eye(3) + B * W + C * W2
    return R, J_l @ rho


def invert(R, t) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Inverse transform (R^T, -R^T t)."""
    Rt = np.asarray(R, dtype=np.float64).T
    return Rt, -Rt @ np.asarray(t, dtype=np.float64)


def transform(points, R, t, pivot=None) -> NDArray[np.float64]:
    """Apply p -> R p + t to an (..., 3) array; with a pivot, rotate about it:
    p -> R (p - pivot) + pivot + t."""
    pts = np.asarray(points, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if pivot is None:
        return pts @ R.T + t
    pivot = np.asarray(pivot, dtype=np.float64).reshape(3)
    return (pts - pivot) @ R.T + pivot + t


def rotation_angle_deg(R_est, R_true) -> float:
    """Angle in degrees of the relative rotation between two matrices."""
    trace = float(np.trace(np.asarray(R_est) @ np.asarray(R_true).T))
    return float(np.degrees(np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0))))
