"""Synthetic training pairs, following the runtime's cloud-pair protocol.

A pair starts from one base shape: source and template are independent
subsamples of it, the template is moved by the ground-truth transform, and
both clouds receive clipped Gaussian jitter. One seed drives everything, so
a dataset is reproducible bit for bit. The shapes, sampling order, and
transform conventions mirror the runtime's `gen` command; the code is
independent so the trainer never imports the runtime.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .se3 import euler_xyz_to_matrix, invert, transform

SHAPE_NAMES = ("sphere", "box", "table")


def _unit_sphere(points: NDArray[np.float64]) -> NDArray[np.float64]:
    """Center on the centroid and scale the farthest point to radius one."""
    centered = points - points.mean(axis=0)
    return centered / np.linalg.norm(centered, axis=1).max()


def base_shape(name: str, n_points: int = 1024, seed: int = 0) -> NDArray[np.float64]:
    """Deterministic surface samples of one of the built-in primitives,
    centered and unit-sphere normalized."""
    if n_points < 4:
        raise ValueError(f"n_points must be >= 4, got {n_points}")
    rng = np.random.default_rng(seed)
    if name == "sphere":
        directions = rng.normal(size=(n_points, 3))
        points = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    elif name == "box":
        half = np.array([1.0, 0.7, 0.4])
        points = rng.uniform(-1.0, 1.0, size=(n_points, 3)) * half
        face_axis = rng.integers(0, 3, size=n_points)
        face_sign = rng.choice([-1.0, 1.0], size=n_points)
        points[np.arange(n_points), face_axis] = face_sign * half[face_axis]
    elif name == "table":
        n_top = n_points // 2
        top = np.column_stack([
            rng.uniform(-1.0, 1.0, size=n_top),
            rng.uniform(-0.6, 0.6, size=n_top),
            np.full(n_top, 0.5),
        ])
        n_leg = n_points - n_top
        leg = np.column_stack([
            rng.uniform(-0.8, 0.8, size=n_leg),
            np.zeros(n_leg),
            rng.uniform(-0.5, 0.5, size=n_leg),
        ])
        points = np.concatenate([top, leg], axis=0)
    else:
        raise ValueError(f"unknown shape {name!r}, expected one of {SHAPE_NAMES}")
    return _unit_sphere(points)


@dataclass(frozen=True)
class Pair:
    """One registration problem: clouds, ground truth, and the class label
    of the base shape (used by the classifier head)."""

    source: NDArray[np.float64]    # (N, 3)
    template: NDArray[np.float64]  # (N, 3)
    R_star: NDArray[np.float64]    # (3, 3) ground-truth rotation
    t_star: NDArray[np.float64]    # (3,) ground-truth translation
    label: int

    @property
    def aligned_source(self) -> NDArray[np.float64]:
        """Source moved by the ground truth; overlays the template."""
        return transform(self.source, self.R_star, self.t_star)


def make_pair(
    base: NDArray[np.float64],
    n_points: int,
    theta_max_deg: float,
    t_max: float,
    jitter_std: float,
    jitter_clip: float,
    seed: int,
    label: int = 0,
) -> Pair:
    """Build one pair from a base cloud.

    Source and template subsample the base independently (sorted indices);
    per-axis Euler angles are uniform in [0, theta_max] and the translation
    uniform in [-t_max, t_max]; the template is moved by the inverse of that
    transform, so registering source onto template recovers the inverse.
    Jitter is drawn last; disabling it changes nothing else.
    """
    base = np.asarray(base, dtype=np.float64)
    if len(base) < n_points:
        raise ValueError(f"base cloud has {len(base)} points, need at least {n_points}")
    rng = np.random.default_rng(seed)
    source_idx = np.sort(rng.choice(len(base), n_points, replace=False))
    template_idx = np.sort(rng.choice(len(base), n_points, replace=False))

    angles = rng.uniform(0.0, np.radians(theta_max_deg), size=3)
    translation = rng.uniform(-t_max, t_max, size=3)
    R_star, t_star = invert(euler_xyz_to_matrix(angles), translation)

    source = base[source_idx]
    template = transform(base[template_idx], R_star, t_star)

    if jitter_std > 0.0:
        source = source + np.clip(
            rng.normal(0.0, jitter_std, size=source.shape), -jitter_clip, jitter_clip
        )
        template = template + np.clip(
            rng.normal(0.0, jitter_std, size=template.shape), -jitter_clip, jitter_clip
        )
    return Pair(source=source, template=template, R_star=R_star, t_star=t_star, label=label)


def make_dataset(
    shapes: tuple[str, ...],
    samples: int,
    n_points: int,
    theta_max_deg: float,
    t_max: float,
    jitter_std: float,
    jitter_clip: float,
    seed: int,
    base_points: int = 1024,
) -> list[Pair]:
    """A list of pairs cycling through `shapes`, one base cloud per shape.

    Pair k uses shape k mod len(shapes) with label = that index, and its own
    pair seed derived from (seed, k), so datasets with different sizes share
    their common prefix.
    """
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    bases = [base_shape(name, n_points=base_points, seed=seed + 7 * i)
             for i, name in enumerate(shapes)]
    pairs = []
    for k in range(samples):
        label = k % len(shapes)
        pairs.append(make_pair(
            bases[label], n_points, theta_max_deg, t_max,
            jitter_std, jitter_clip, seed=seed * 100_003 + k, label=label,
        ))
    return pairs


def stack_clouds(pairs: list[Pair], which: str) -> NDArray[np.float64]:
    """(B, N, 3) stack of one cloud per pair: 'source', 'template', or
    'aligned' (source moved by the ground truth)."""
    if which == "source":
        return np.stack([p.source for p in pairs])
    if which == "template":
        return np.stack([p.template for p in pairs])
    if which == "aligned":
        return np.stack([p.aligned_source for p in pairs])
    raise ValueError(f"unknown cloud selector {which!r}")
