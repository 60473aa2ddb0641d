"""Feature-space alignment solver with a precomputed pose Jacobian.

The solver aligns a source cloud to a template by driving the difference of
their global features to zero. Its defining trait is the inverse-compositional
arrangement: the Jacobian of the feature w.r.t. an inverse template motion is
built once, pseudo-inverted once, and reused every iteration, so the per-
iteration cost is one feature extraction plus a 6-vector solve.

The Jacobian itself is estimated by finite differences over perturbed copies
of the template (no autodiff through the feature extractor), with four
schemes of increasing stencil width and accuracy order. The 6x6 normal-matrix
inverse is computed blockwise from closed-form 3x3 adjugates, mirroring a
division-free hardware-style evaluation rather than a general LU path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .lie import (
    F64,
    Points,
    RigidTransform,
    Twist,
    apply,
    compose,
    exp_se3,
    perturbation,
)

JACOBIAN_METHODS = ("forward", "backward", "central", "five_point")

# Feature extraction calls made by each scheme beyond the shared base feature.
JACOBIAN_CALLS = {"forward": 6, "backward": 6, "central": 12, "five_point": 24}

# Determinant floor below which a 3x3 block of the normal matrix is treated
# as singular.
SINGULAR_DET_FLOOR = 1e-12

FeatureExtractor = Callable[[Points], NDArray[F64]]


class SingularJacobianError(RuntimeError):
    """Normal matrix of the Jacobian has a (near-)singular 3x3 block."""


class NonFiniteFeatureError(RuntimeError):
    """Feature extractor produced NaN or infinity during registration."""


@dataclass(frozen=True, slots=True)
class LkOptions:
    """Solver knobs: iteration budget, stop threshold, difference scheme.

    `step` is the finite-difference magnitude, either one scalar shared by
    all six twist axes or a per-axis 6-vector. `ridge` (off by default) adds
    1e-9 * trace to the normal matrix diagonal before inversion; the default
    behaviour is to fail loudly on singular Jacobians instead of silently
    damping them, so accuracy tests cannot be contaminated.
    """

    max_iters: int = 20
    epsilon: float = 1e-7
    step: float | Sequence[float] = 0.01
    method: str = "central"
    ridge: bool = False

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.method not in JACOBIAN_METHODS:
            raise ValueError(f"method must be one of {JACOBIAN_METHODS}, got {self.method!r}")
        if np.any(np.asarray(self.step, dtype=np.float64) <= 0.0):
            raise ValueError("step sizes must be positive")


@dataclass(frozen=True, slots=True)
class JacobianBundle:
    """Feature Jacobian and its pseudoinverse, fixed for a whole solve."""

    J: NDArray[F64]       # (K, 6)
    Jdag: NDArray[F64]    # (6, K)
    method: str
    steps: NDArray[F64]   # (6,)

    def __post_init__(self) -> None:
        if self.J.ndim != 2 or self.J.shape[1] != 6:
            raise ValueError(f"J must be (K, 6), got {self.J.shape}")
        if self.Jdag.shape != (6, self.J.shape[0]):
            raise ValueError(f"Jdag must be (6, {self.J.shape[0]}), got {self.Jdag.shape}")


@dataclass(frozen=True, slots=True)
class RegistrationResult:
    """Outcome of a registration run.

    `history` holds the per-iteration update magnitudes (twist norms for this
    solver) and `transforms` the estimate after each iteration; both have
    exactly `iterations` entries.
    """

    G: RigidTransform
    iterations: int
    converged: bool
    history: tuple[float, ...]
    transforms: tuple[RigidTransform, ...] = field(repr=False)

    def __post_init__(self) -> None:
        if len(self.history) != self.iterations:
            raise ValueError("history length must equal the iteration count")


def _checked_cloud(cloud, name: str) -> Points:
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty (N, 3) cloud, got shape {pts.shape}")
    return pts


def _step_vector(step) -> NDArray[F64]:
    steps = np.broadcast_to(np.asarray(step, dtype=np.float64), (6,)).copy()
    if np.any(steps <= 0.0) or not np.all(np.isfinite(steps)):
        raise ValueError(f"steps must be positive and finite, got {steps}")
    return steps


def numerical_jacobian(
    template,
    extractor: FeatureExtractor,
    method: str = "central",
    step: float | Sequence[float] = 0.01,
    base_feature: NDArray[F64] | None = None,
) -> NDArray[F64]:
    """Estimate the K x 6 feature Jacobian w.r.t. an inverse template motion.

    Column j approximates the derivative of extractor(exp(-s e_j) template)
    at s = 0. Writing h_j(s) for that path, the schemes sample the first-
    order perturbation transforms from the twist module (whose minus/plus
    variants land at h_j(+s) / h_j(-s) respectively) and combine them as:

        backward:   (h(t) - h(0)) / t                      6 extra calls
        forward:    (h(0) - h(-t)) / t                     6 extra calls
        central:    (h(t) - h(-t)) / (2t)                 12 calls
        five_point: (-h(2t) + 8h(t) - 8h(-t) + h(-2t))    24 calls
                    / (12t)

    `base_feature` lets callers that already extracted the unperturbed
    feature share it with the one-sided schemes.
    """
    pts = _checked_cloud(template, "template")
    if method not in JACOBIAN_METHODS:
        raise ValueError(f"method must be one of {JACOBIAN_METHODS}, got {method!r}")
    steps = _step_vector(step)

    def perturbed(axis: int, magnitude: float, sign: int) -> NDArray[F64]:
        moved = apply(perturbation(axis, magnitude, sign), pts)
        return np.asarray(extractor(moved), dtype=np.float64)

    if method in ("forward", "backward") and base_feature is None:
        base_feature = np.asarray(extractor(pts), dtype=np.float64)

    columns = []
    for axis in range(1, 7):
        t = float(steps[axis - 1])
        if method == "backward":
            col = (perturbed(axis, t, -1) - base_feature) / t
        elif method == "forward":
            col = (base_feature - perturbed(axis, t, +1)) / t
        elif method == "central":
            col = (perturbed(axis, t, -1) - perturbed(axis, t, +1)) / (2.0 * t)
        else:  # five_point
            col = (
                -perturbed(axis, 2.0 * t, -1)
                + 8.0 * perturbed(axis, t, -1)
                - 8.0 * perturbed(axis, t, +1)
                + perturbed(axis, 2.0 * t, +1)
            ) / (12.0 * t)
        columns.append(col)
    return np.column_stack(columns)


def _adjugate3(X: NDArray[F64]) -> NDArray[F64]:
    """Transposed cofactor matrix of a 3x3 matrix, written out in closed form."""
    a, b, c = X[0]
    d, e, f = X[1]
    g, h, i = X[2]
    return np.array([
        [e * i - f * h, c * h - b * i, b * f - c * e],
        [f * g - d * i, a * i - c * g, c * d - a * f],
        [d * h - e * g, b * g - a * h, a * e - b * d],
    ])


def _inverse3(X: NDArray[F64], label: str) -> NDArray[F64]:
    adj = _adjugate3(X)
    det = float(X[0, 0] * adj[0, 0] + X[0, 1] * adj[1, 0] + X[0, 2] * adj[2, 0])
    if abs(det) < SINGULAR_DET_FLOOR:
        raise SingularJacobianError(
            f"{label} 3x3 block of J^T J has |det| = {abs(det):.3e} < {SINGULAR_DET_FLOOR:g}; "
            "the Jacobian is rank-deficient"
        )
    return adj / det


def pinv6(J, ridge: float = 0.0) -> NDArray[F64]:
    """Pseudoinverse (J^T J)^-1 J^T via blockwise 3x3 adjugate inversion.

    The 6x6 normal matrix is split into 3x3 blocks [[A, B], [B^T, D]]; A and
    the Schur complement D - B^T A^-1 B are inverted by the adjugate/
    determinant formula and recombined. A positive `ridge` is added to the
    diagonal first (opt-in damping for callers that prefer degraded accuracy
    over failure).
    """
    J = np.asarray(J, dtype=np.float64)
    if J.ndim != 2 or J.shape[1] != 6 or J.shape[0] < 6:
        raise ValueError(f"J must be (K, 6) with K >= 6, got {J.shape}")
    M = J.T @ J
    if ridge:
        M = M + ridge * np.eye(6)
    A, B, D = M[:3, :3], M[:3, 3:], M[3:, 3:]
    A_inv = _inverse3(A, "upper-left")
    schur = D - B.T @ A_inv @ B
    S_inv = _inverse3(schur, "Schur-complement")
    top_right = -A_inv @ B @ S_inv
    M_inv = np.block([
        [A_inv + A_inv @ B @ S_inv @ B.T @ A_inv, top_right],
        [top_right.T, S_inv],
    ])
    return M_inv @ J.T


def build_jacobian(
    template,
    extractor: FeatureExtractor,
    opts: LkOptions = LkOptions(),
    base_feature: NDArray[F64] | None = None,
) -> JacobianBundle:
    """Construct the Jacobian and its pseudoinverse for one solve."""
    steps = _step_vector(opts.step)
    J = numerical_jacobian(template, extractor, opts.method, steps, base_feature)
    ridge = 1e-9 * float(np.trace(J.T @ J)) if opts.ridge else 0.0
    return JacobianBundle(J=J, Jdag=pinv6(J, ridge=ridge), method=opts.method, steps=steps)


def register(
    source,
    template,
    extractor: FeatureExtractor,
    opts: LkOptions = LkOptions(),
    initial: RigidTransform | None = None,
) -> RegistrationResult:
    """Align `source` to `template` by iterative feature-difference descent.

    One template feature extraction and one Jacobian construction happen up
    front; each iteration then extracts the feature of the currently moved
    source, solves for the twist update, and left-composes its exponential
    onto the estimate. Stops when the update norm drops below epsilon or the
    iteration budget is spent. Total extractor invocations are therefore
    1 + (6|12|24, by scheme) + iterations.
    """
    src = _checked_cloud(source, "source")
    tmpl = _checked_cloud(template, "template")

    base = np.asarray(extractor(tmpl), dtype=np.float64)
    if not np.all(np.isfinite(base)):
        raise NonFiniteFeatureError("template feature contains non-finite values")
    bundle = build_jacobian(tmpl, extractor, opts, base_feature=base)

    G = RigidTransform.identity() if initial is None else initial
    history: list[float] = []
    transforms: list[RigidTransform] = []
    converged = False

    for iteration in range(1, opts.max_iters + 1):
        feature = np.asarray(extractor(apply(G, src)), dtype=np.float64)
        if not np.all(np.isfinite(feature)):
            raise NonFiniteFeatureError(
                f"source feature became non-finite at iteration {iteration}"
            )
        delta = bundle.Jdag @ (feature - base)
        G = compose(exp_se3(Twist.from_vector(delta)), G)
        norm = float(np.linalg.norm(delta))
        history.append(norm)
        transforms.append(G)
        if norm < opts.epsilon:
            converged = True
            break

    return RegistrationResult(
        G=G,
        iterations=len(history),
        converged=converged,
        history=tuple(history),
        transforms=tuple(transforms),
    )
