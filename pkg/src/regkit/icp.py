"""Point-to-point iterative closest point, the correspondence baseline.

Alternates brute-force nearest-neighbor matching with the closed-form SVD
alignment of the matched pairs. Deliberately classic: it exists as the
contrast case for the feature-based solvers on large rotations.
"""

from __future__ import annotations

import numpy as np

from .lie import RigidTransform, apply, compose
from .metrics import nearest_neighbors
from .pointlk import RegistrationResult, _checked_cloud


def svd_alignment(source: np.ndarray, target: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform taking paired source points to target.

    The SVD solution, with the reflection corrected by sign of the
    determinant so degenerate (e.g. planar) pairings still yield a proper
    rotation.
    """
    if source.shape != target.shape:
        raise ValueError(f"paired clouds must match, got {source.shape} vs {target.shape}")
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    cov = (source - mu_s).T @ (target - mu_t)
    u, _, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rotation, mu_t - rotation @ mu_s)


def icp_pt2pt(
    source,
    template,
    max_iters: int = 50,
    tol: float = 1e-8,
) -> RegistrationResult:
    """Register source onto template by alternating matching and alignment.

    Stops early when the mean squared matched distance falls below `tol` or
    improves by less than `tol`; history records that distance per iteration.
    """
    source = _checked_cloud(source, "source")
    template = _checked_cloud(template, "template")
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")

    g = RigidTransform.identity()
    moved = source
    history: list[float] = []
    transforms: list[RigidTransform] = []
    previous = np.inf
    converged = False
    for _ in range(max_iters):
        matched_idx, sq_dists = nearest_neighbors(moved, template)
        step = svd_alignment(moved, template[matched_idx])
        g = compose(step, g)
        moved = apply(step, moved)
        mean_sq = float(sq_dists.mean())
        history.append(mean_sq)
        transforms.append(g)
        if mean_sq < tol or previous - mean_sq < tol:
            converged = True
            break
        previous = mean_sq

    return RegistrationResult(
        G=g,
        iterations=len(history),
        converged=converged,
        history=tuple(history),
        transforms=tuple(transforms),
    )
