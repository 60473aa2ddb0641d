"""Analytic reference backbones used to validate the registration solvers.

Two independent tools live here:

* A moment feature map (per-cloud averages of coordinate monomials) whose
  pose Jacobian has a closed form. It stands in for a trained point-cloud
  network wherever solver properties must be checked against exact math.
* The greedy expert policy for the discrete-action solver: per axis it picks
  the step from the exponential ladder that best cancels the remaining
  residual, which is the supervision signal the learned actor imitates.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.typing import NDArray

from .lie import F64, Points, RigidTransform, euler_xyz_from_matrix, skew

# Per-axis step magnitudes form a geometric ladder with ratio 3; six rungs
# from the coarsest usable step down to the resolution floor.
STEP_LEVELS = 6
STEP_BASE = 1.0 / 900.0

# Index of the zero step in the ladder produced by exponential_steps().
NOOP_LABEL = STEP_LEVELS

EXPERT_HEADS = ("translation", "rotation")


# ---------------------------------------------------------------------------
# moment features
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class MomentFeatureConfig:
    """Selects how many monomial orders the feature vector concatenates.

    Orders 1..max_order are included; order 1 contributes the 3 coordinate
    means, order 2 the 6 distinct quadratic averages, order 3 the 10 cubics,
    so max_order = 3 yields a 19-dimensional feature. Clouds need at least 4
    points in general position for the order-2 block to respond to all six
    pose directions independently.
    """

    max_order: int = 3

    def __post_init__(self) -> None:
        if self.max_order not in (1, 2, 3):
            raise ValueError(f"max_order must be 1, 2, or 3, got {self.max_order}")

    @property
    def dim(self) -> int:
        return len(monomial_exponents(self.max_order))


@lru_cache(maxsize=None)
def monomial_exponents(max_order: int) -> tuple[tuple[int, int, int], ...]:
    """Exponent triples (i, j, k) of x^i y^j z^k in the feature ordering.

    Within each total order o the x exponent runs from o down to 0 and the
    y exponent from the remainder down to 0, so order 2 reads
    (x2, xy, xz, y2, yz, z2) and order 3 starts at x3 and ends at z3.
    """
    triples: list[tuple[int, int, int]] = []
    for order in range(1, max_order + 1):
        for i in range(order, -1, -1):
            for j in range(order - i, -1, -1):
                triples.append((i, j, order - i - j))
    return tuple(triples)


def _checked_cloud(cloud) -> Points:
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) cloud, got shape {pts.shape}")
    if pts.shape[0] == 0:
        raise ValueError("cloud must contain at least one point")
    if not np.all(np.isfinite(pts)):
        raise ValueError("cloud contains non-finite coordinates")
    return pts


def moment_feature(cloud, cfg: MomentFeatureConfig = MomentFeatureConfig()) -> NDArray[F64]:
    """Average each monomial x^i y^j z^k over the cloud.

    Averages (not sums) keep the feature scale independent of the point
    count, so features of clouds with different N are comparable.
    """
    pts = _checked_cloud(cloud)
    exps = np.array(monomial_exponents(cfg.max_order), dtype=np.float64)
    # (N, d, 3) powers -> product over the coordinate axis -> mean over points.
    monomials = np.prod(pts[:, None, :] ** exps[None, :, :], axis=2)
    return monomials.mean(axis=0)


def moment_gradients(cloud, cfg: MomentFeatureConfig = MomentFeatureConfig()) -> NDArray[F64]:
    """Per-point gradients a_k of each feature: shape (d, N, 3).

    Entry [k, i, m] is the derivative of feature k with respect to coordinate
    m of point i; for the average of x^i y^j z^k that is the monomial's
    partial derivative divided by N.
    """
    pts = _checked_cloud(cloud)
    n = pts.shape[0]
    exps = np.array(monomial_exponents(cfg.max_order), dtype=np.float64)  # (d, 3)
    grads = np.empty((exps.shape[0], n, 3), dtype=np.float64)
    for m in range(3):
        lowered = exps.copy()
        lowered[:, m] = np.maximum(lowered[:, m] - 1.0, 0.0)
        partial = np.prod(pts[:, None, :] ** lowered[None, :, :], axis=2)  # (N, d)
        grads[:, :, m] = (exps[:, m][None, :] * partial).T
    return grads / n


def moment_jacobian_analytic(
    cloud, cfg: MomentFeatureConfig = MomentFeatureConfig()
) -> NDArray[F64]:
    """Closed-form d x 6 Jacobian of the moment features w.r.t. a pose twist.

    Column j holds the derivative of the features when the cloud is moved by
    the inverse of an infinitesimal motion along twist axis j (rotations
    about x, y, z first, then translations), which is the quantity the
    finite-difference schemes in the solver estimate. Each entry is
    J[k, j] = -sum_i a_k(p_i) . c_j(p_i) with a_k the per-point feature
    gradient and c_j the velocity field of axis j: c_j(p) = e_j^ x p for
    rotations and the constant basis vector for translations.
    """
    pts = _checked_cloud(cloud)
    n = pts.shape[0]
    grads = moment_gradients(pts, cfg)  # (d, N, 3)

    fields = np.empty((6, n, 3), dtype=np.float64)
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = 1.0
        fields[axis] = pts @ skew(e).T      # rotation velocity e^ x p per point
        fields[3 + axis] = np.tile(e, (n, 1))  # translation velocity, constant

    return -np.einsum("kim,jim->kj", grads, fields)


# ---------------------------------------------------------------------------
# expert policy
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def exponential_steps(levels: int = STEP_LEVELS, base: float = STEP_BASE) -> tuple[float, ...]:
    """The shared step ladder: -base*3^(levels-1) .. -base, 0, base .. base*3^(levels-1).

    With the defaults this is {0, +-1/900, +-1/300, +-0.01, +-0.03, +-0.09,
    +-0.27}: 2*levels + 1 ordered entries, antisymmetric about the zero step
    at index `levels`. Both the action table of the discrete-action solver
    and this module's expert draw from it.
    """
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    if base <= 0.0:
        raise ValueError(f"base must be positive, got {base}")
    negatives = [-base * 3.0 ** (levels - 1 - a) for a in range(levels)]
    positives = [base * 3.0 ** (a - 1) for a in range(1, levels + 1)]
    return tuple(negatives) + (0.0,) + tuple(positives)


def _best_label(residual: float, steps: tuple[float, ...]) -> int:
    """Label whose step best cancels `residual`; ties prefer the smaller step.

    The zero step is always a candidate, so the chosen step never increases
    the residual magnitude. On exact cost ties the smaller |step| wins (the
    zero step in particular), which keeps repeated application from
    oscillating around a converged state.
    """
    costs = [abs(residual - s) for s in steps]
    return min(range(len(steps)), key=lambda a: (costs[a], abs(steps[a]), a))


def expert_action(
    current: RigidTransform,
    target: RigidTransform,
    head: str,
    steps: tuple[float, ...] | None = None,
) -> tuple[int, int, int]:
    """Greedy per-axis action labels moving `current` toward `target`.

    For the translation head the residual is simply target.t - current.t per
    axis, because the disentangled update accumulates translation steps
    additively. For the rotation head the left-residual rotation
    R_target @ R_current^T is split into its x-y-z factored Euler angles --
    the same factor structure the update applies -- and each angle is treated
    as an independent axis residual; the split is exact only for small
    residuals, which repeated application reaches quickly.

    Returns one label per axis into the step ladder; the no-op label is
    `len(steps) // 2` (NOOP_LABEL for the default ladder).
    """
    if head not in EXPERT_HEADS:
        raise ValueError(f"head must be one of {EXPERT_HEADS}, got {head!r}")
    if steps is None:
        steps = exponential_steps()
    if head == "translation":
        residuals = target.t - current.t
    else:
        residuals = euler_xyz_from_matrix(target.R @ current.R.T)
    return tuple(_best_label(float(r), steps) for r in residuals)
