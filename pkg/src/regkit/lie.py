"""Rigid-body math on SE(3): twists, exponential map, composition, perturbations.

All solver modules in this package express pose updates as six-component
twists (three rotational, three translational) and turn them into rigid
transforms through the exponential map. Keeping this in one place makes the
small-angle handling and the re-orthonormalization policy auditable.

Everything here is float64 and purely functional; no shared state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray

F64: TypeAlias = np.float64

Points: TypeAlias = NDArray[F64]  # Expected shape: (N, 3)
Mat4: TypeAlias = NDArray[F64]    # Expected shape: (4, 4)
Mat3: TypeAlias = NDArray[F64]    # Expected shape: (3, 3)
Vec3: TypeAlias = NDArray[F64]    # Expected shape: (3,)
Vec6: TypeAlias = NDArray[F64]    # Expected shape: (6,)

# Below this rotation magnitude the closed-form Rodrigues coefficients are
# replaced by 2nd-order Taylor expansions to avoid 0/0.
SMALL_ANGLE = 1e-6

# Rotation matrices accumulate roundoff under repeated composition; after this
# many products the rotation is re-projected onto the nearest orthonormal
# matrix, which keeps drift bounded in long iterative runs.
RENORM_EVERY = 50

# Orthonormality tolerance enforced on construction.
ROTATION_ATOL = 1e-6


def _as_f64(x) -> NDArray[F64]:
    """Convert array-like input to a float64 numpy array."""
    return np.asarray(x, dtype=np.float64)


def skew(v: Vec3) -> Mat3:
    """Return the 3x3 skew-symmetric matrix such that skew(v) @ u == cross(v, u)."""
    x, y, z = _as_f64(v).reshape(3)
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]], dtype=np.float64)


def nearest_rotation(M: Mat3) -> Mat3:
    """Project a near-rotation matrix onto SO(3) (polar factor via SVD).

    The sign fix on the last singular vector guards against reflections when
    the input is badly conditioned.
    """
    U, _, Vt = np.linalg.svd(_as_f64(M))
    D = np.diag([1.0, 1.0, float(np.sign(np.linalg.det(U @ Vt)))])
    return U @ D @ Vt


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Twist:
    """Six-DoF velocity element: rotational part omega, translational part rho.

    Components must be finite; no magnitude cap is imposed here because the
    iterative solvers themselves guarantee small steps.
    """

    omega: Vec3
    rho: Vec3

    def __post_init__(self) -> None:
        object.__setattr__(self, "omega", _as_f64(self.omega).reshape(3))
        object.__setattr__(self, "rho", _as_f64(self.rho).reshape(3))
        if not (np.isfinite(self.omega).all() and np.isfinite(self.rho).all()):
            raise ValueError("twist components must be finite")

    @staticmethod
    def from_vector(xi: Vec6) -> "Twist":
        """Build from a 6-vector ordered (omega, rho)."""
        xi = _as_f64(xi).reshape(6)
        return Twist(omega=xi[:3], rho=xi[3:])

    def as_vector(self) -> Vec6:
        """Return the 6-vector (omega, rho)."""
        return np.concatenate([self.omega, self.rho])

    def __neg__(self) -> "Twist":
        return Twist(omega=-self.omega, rho=-self.rho)


@dataclass(frozen=True)
class RigidTransform:
    """Rotation matrix plus translation vector; the solver state.

    The rotation must be orthonormal with determinant +1 within 1e-6; violating
    inputs are rejected at construction so that drift is caught where it
    happens rather than many compositions later.
    """

    R: Mat3
    t: Vec3
    # Number of raw matrix products since the last re-orthonormalization;
    # compose() uses it to decide when to re-project.
    _products: int = field(default=0, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "R", _as_f64(self.R).reshape(3, 3))
        object.__setattr__(self, "t", _as_f64(self.t).reshape(3))
        err = np.abs(self.R.T @ self.R - np.eye(3)).max()
        if err > ROTATION_ATOL:
            raise ValueError(f"rotation not orthonormal (max deviation {err:.2e})")
        if abs(np.linalg.det(self.R) - 1.0) > ROTATION_ATOL:
            raise ValueError("rotation must have determinant +1")

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(R=np.eye(3), t=np.zeros(3))

    def matrix(self) -> Mat4:
        """Return the 4x4 homogeneous matrix."""
        T = np.eye(4, dtype=np.float64)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    @staticmethod
    def from_matrix(T: Mat4) -> "RigidTransform":
        T = _as_f64(T)
        return RigidTransform(R=T[:3, :3], t=T[:3, 3])


# ---------------------------------------------------------------------------
# Twist algebra
# ---------------------------------------------------------------------------

def wedge(xi: Twist) -> Mat4:
    """Map a twist to its 4x4 matrix form: skew(omega) in the upper-left block,
    rho in the top of the last column, zero bottom row."""
    W = np.zeros((4, 4), dtype=np.float64)
    W[:3, :3] = skew(xi.omega)
    W[:3, 3] = xi.rho
    return W


def _rodrigues_coefficients(theta: float) -> tuple[float, float, float]:
    """Coefficients (A, B, C) with R = I + A*W + B*W^2 and J_l = I + C*W + ...

    A = sin(t)/t, B = (1-cos(t))/t^2, C = (t-sin(t))/t^3, with 2nd-order Taylor
    branches below SMALL_ANGLE so the map is continuous through zero.
    """
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        A = 1.0 - t2 / 6.0
        B = 0.5 - t2 / 24.0
        C = 1.0 / 6.0 - t2 / 120.0
    else:
        A = np.sin(theta) / theta
        B = (1.0 - np.cos(theta)) / (theta * theta)
        C = (theta - np.sin(theta)) / (theta * theta * theta)
    return float(A), float(B), float(C)


def exp_se3(xi: Twist) -> RigidTransform:
    """Exponential map from a twist to a rigid transform.

    Rotation by the Rodrigues formula; translation through the left Jacobian,
    t = J_l(omega) @ rho, so that straight-line twists integrate exactly.
    """
    theta = float(np.linalg.norm(xi.omega))
    W = skew(xi.omega)
    W2 = W @ W
    A, B, C = _rodrigues_coefficients(theta)
    R = np.eye(3) + A * W + B * W2
    J_l = np.eye(3) + B * W + C * W2
    return RigidTransform(R=nearest_rotation(R), t=J_l @ xi.rho)


# ---------------------------------------------------------------------------
# Group operations
# ---------------------------------------------------------------------------

def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Return the product a * b (apply b first, then a).

    Tracks how many raw products the result has accumulated and re-projects
    the rotation onto SO(3) once the count passes RENORM_EVERY.
    """
    R = a.R @ b.R
    t = a.R @ b.t + a.t
    products = a._products + b._products + 1
    if products > RENORM_EVERY:
        R = nearest_rotation(R)
        products = 0
    return RigidTransform(R=R, t=t, _products=products)


def inverse(g: RigidTransform) -> RigidTransform:
    """Return the inverse transform (R^T, -R^T t)."""
    Rt = g.R.T
    return RigidTransform(R=Rt, t=-Rt @ g.t, _products=g._products)


def apply(g: RigidTransform, cloud: Points, mu: Vec3 | None = None) -> Points:
    """Transform an (N, 3) cloud.

    With mu=None each point maps to R p + t. With a pivot mu the rotation acts
    about that point instead of the origin: p -> R (p - mu) + mu + t, which
    keeps the rotation and translation actions independent of each other.
    """
    pts = _as_f64(cloud)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) cloud, got shape {pts.shape}")
    if mu is None:
        return pts @ g.R.T + g.t
    mu = _as_f64(mu).reshape(3)
    return (pts - mu) @ g.R.T + mu + g.t


def rotation_x(angle: float) -> Mat3:
    """Rotation by `angle` radians about the x axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0],
                     [0.0, c, -s],
                     [0.0, s, c]], dtype=np.float64)


def rotation_y(angle: float) -> Mat3:
    """Rotation by `angle` radians about the y axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s],
                     [0.0, 1.0, 0.0],
                     [-s, 0.0, c]], dtype=np.float64)


def rotation_z(angle: float) -> Mat3:
    """Rotation by `angle` radians about the z axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0],
                     [s, c, 0.0],
                     [0.0, 0.0, 1.0]], dtype=np.float64)


def euler_xyz_to_matrix(angles) -> Mat3:
    """Compose R = rotation_x(a) @ rotation_y(b) @ rotation_z(c)."""
    a, b, c = _as_f64(angles).reshape(3)
    return rotation_x(a) @ rotation_y(b) @ rotation_z(c)


def euler_xyz_from_matrix(R: Mat3) -> Vec3:
    """Recover (a, b, c) with R = rotation_x(a) @ rotation_y(b) @ rotation_z(c).

    b lies in [-pi/2, pi/2]. At the |b| = pi/2 degeneracy only a combination
    of a and c is observable; c is pinned to 0 there so the result stays
    deterministic.
    """
    R = _as_f64(R)
    sb = float(np.clip(R[0, 2], -1.0, 1.0))
    b = float(np.arcsin(sb))
    if abs(sb) >= 1.0 - 1e-12:
        if sb > 0.0:  # a + c observable
            a = float(np.arctan2(R[1, 0], R[1, 1]))
        else:         # a - c observable
            a = float(np.arctan2(-R[1, 0], R[1, 1]))
        return np.array([a, b, 0.0])
    a = float(np.arctan2(-R[1, 2], R[2, 2]))
    c = float(np.arctan2(-R[0, 1], R[0, 0]))
    return np.array([a, b, c])


def perturbation(j: int, step: float, sign: int) -> RigidTransform:
    """First-order perturbation transform I +- step * e_j^ along twist axis j.

    Axes 1..3 are rotations about x, y, z; axes 4..6 are translations. The raw
    rotation block of I + step*skew(e_j) is not exactly orthonormal, so it is
    re-projected; the projection changes the matrix only at O(step^2), which
    downstream finite-difference accuracy analysis tolerates.
    """
    if not 1 <= j <= 6:
        raise ValueError(f"perturbation axis must be in 1..6, got {j}")
    if step <= 0.0:
        raise ValueError(f"perturbation step must be positive, got {step}")
    if sign not in (+1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    e = np.zeros(6)
    e[j - 1] = sign * step
    xi = Twist.from_vector(e)
    M = np.eye(4) + wedge(xi)
    return RigidTransform(R=nearest_rotation(M[:3, :3]), t=M[:3, 3])
