"""Registration error metrics and brute-force nearest neighbors."""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from .lie import RigidTransform

_CHUNK_ROWS = 1024


def iso_error(g_est: RigidTransform, g_star: RigidTransform) -> tuple[float, float]:
    """Isotropic rotation error (degrees) and translation error (length).

    Rotation error is the angle of the relative rotation; its trace is
    clamped to [-1, 3] before the arccosine to guard against floating-point
    drift on (near-)exact matches.
    """
    trace = float(np.trace(g_est.R @ g_star.R.T))
    angle = np.degrees(np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0)))
    return float(angle), float(np.linalg.norm(g_est.t - g_star.t))


def _checked_points(cloud, name: str) -> NDArray[np.float64]:
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] != 3 or len(cloud) == 0:
        raise ValueError(f"{name} must be a non-empty (N, 3) array, got {cloud.shape}")
    return cloud


def nearest_neighbors(
    queries: NDArray[np.float64], targets: NDArray[np.float64]
) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
    """Index into `targets` of each query's nearest point, plus the squared
    distance, by chunked exhaustive search."""
    queries = _checked_points(queries, "queries")
    targets = _checked_points(targets, "targets")
    indices = np.empty(len(queries), dtype=np.int64)
    sq_dists = np.empty(len(queries), dtype=np.float64)
    target_norms = (targets * targets).sum(axis=1)
    for start in range(0, len(queries), _CHUNK_ROWS):
        chunk = queries[start:start + _CHUNK_ROWS]
        d2 = (
            (chunk * chunk).sum(axis=1)[:, None]
            + target_norms[None, :]
            - 2.0 * chunk @ targets.T
        )
        best = d2.argmin(axis=1)
        indices[start:start + _CHUNK_ROWS] = best
        # The expanded-norm identity can drift by an ulp; recompute the
        # winning distances directly so exact matches come out exactly zero.
        diff = chunk - targets[best]
        sq_dists[start:start + _CHUNK_ROWS] = (diff * diff).sum(axis=1)
    return indices, sq_dists


def chamfer(a: NDArray[np.float64], b: NDArray[np.float64]) -> float:
    """Symmetric mean of squared nearest-neighbor distances."""
    _, forward = nearest_neighbors(a, b)
    _, backward = nearest_neighbors(b, a)
    return float(forward.mean() + backward.mean())
