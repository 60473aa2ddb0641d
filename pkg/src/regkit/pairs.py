"""Synthetic registration pairs: base shapes, perturbations, and cloud files.

A pair is built from one base shape: source and template are independent
subsamples, the template is moved by the ground-truth transform, and both
clouds optionally receive clipped Gaussian jitter. Everything is driven by
one seed, so a pair is reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .lie import RigidTransform, apply, euler_xyz_to_matrix, inverse

SHAPE_NAMES = ("sphere", "box", "table")

DEFAULT_THETA_MAX_DEG = 45.0
DEFAULT_T_MAX = 0.5
DEFAULT_JITTER_STD = 0.01
DEFAULT_JITTER_CLIP = 0.05


def _unit_sphere(points: NDArray[np.float64]) -> NDArray[np.float64]:
    """Center on the centroid and scale the farthest point to radius one."""
    centered = points - points.mean(axis=0)
    radius = np.linalg.norm(centered, axis=1).max()
    return centered / radius


def base_shape(name: str, n_points: int = 4096, seed: int = 0) -> NDArray[np.float64]:
    """Deterministic point cloud on one of the built-in primitives.

    All shapes are surface samples, centered and unit-sphere normalized.
    """
    if n_points < 4:
        raise ValueError(f"n_points must be >= 4, got {n_points}")
    rng = np.random.default_rng(seed)
    if name == "sphere":
        directions = rng.normal(size=(n_points, 3))
        points = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    elif name == "box":
        # Sample each point on a random face of a 2 x 1.4 x 0.8 box.
        half = np.array([1.0, 0.7, 0.4])
        points = rng.uniform(-1.0, 1.0, size=(n_points, 3)) * half
        face_axis = rng.integers(0, 3, size=n_points)
        face_sign = rng.choice([-1.0, 1.0], size=n_points)
        points[np.arange(n_points), face_axis] = face_sign * half[face_axis]
    elif name == "table":
        # A horizontal top slab over a perpendicular support plane.
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


@dataclass(frozen=True, slots=True)
class PairSpec:
    """Parameters of one synthetic registration problem."""

    n_points: int
    theta_max_deg: float = DEFAULT_THETA_MAX_DEG
    t_max: float = DEFAULT_T_MAX
    r_std: float = DEFAULT_JITTER_STD
    r_clip: float = DEFAULT_JITTER_CLIP
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_points < 4:
            raise ValueError(f"n_points must be >= 4, got {self.n_points}")
        if not 0.0 <= self.theta_max_deg <= 180.0:
            raise ValueError(f"theta_max_deg must be in [0, 180], got {self.theta_max_deg}")
        if self.t_max < 0.0:
            raise ValueError(f"t_max must be >= 0, got {self.t_max}")
        if not 0.0 <= self.r_std <= self.r_clip:
            raise ValueError(
                f"need r_clip >= r_std >= 0, got r_std={self.r_std}, r_clip={self.r_clip}"
            )


def gen_pair(
    spec: PairSpec, base: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64], RigidTransform]:
    """Build (source, template, ground truth) from a base cloud.

    Source and template subsample the base independently (indices sorted, so
    subsampling the whole cloud reproduces it exactly). A transform G with
    per-axis Euler angles uniform in [0, theta_max] and translation uniform
    in [-t_max, t_max] is sampled, and the template is moved by its inverse
    G*; registering source onto template must recover G*. Jitter, when
    enabled, is drawn last, so disabling it changes nothing else.
    """
    base = np.asarray(base, dtype=np.float64)
    if base.ndim != 2 or base.shape[1] != 3:
        raise ValueError(f"base must be (N, 3), got {base.shape}")
    if len(base) < spec.n_points:
        raise ValueError(
            f"base cloud has {len(base)} points, need at least {spec.n_points}"
        )

    rng = np.random.default_rng(spec.seed)
    source_idx = np.sort(rng.choice(len(base), spec.n_points, replace=False))
    template_idx = np.sort(rng.choice(len(base), spec.n_points, replace=False))

    angles = rng.uniform(0.0, np.radians(spec.theta_max_deg), size=3)
    translation = rng.uniform(-spec.t_max, spec.t_max, size=3)
    g_star = inverse(RigidTransform(euler_xyz_to_matrix(angles), translation))

    source = base[source_idx]
    template = apply(g_star, base[template_idx])

    if spec.r_std > 0.0:
        source = source + np.clip(
            rng.normal(0.0, spec.r_std, size=source.shape), -spec.r_clip, spec.r_clip
        )
        template = template + np.clip(
            rng.normal(0.0, spec.r_std, size=template.shape), -spec.r_clip, spec.r_clip
        )
    return source, template, g_star


# ---------------------------------------------------------------------------
# Cloud files: a count line, then one "x y z" row per point
# ---------------------------------------------------------------------------

def save_cloud(path, cloud: NDArray[np.float64]) -> None:
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise ValueError(f"cloud must be (N, 3), got {cloud.shape}")
    lines = [str(len(cloud))]
    lines.extend(f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in cloud)
    Path(path).write_text("\n".join(lines) + "\n")


def save_transform(path, g: RigidTransform) -> None:
    """Write a transform as four 'x y z' rows: three of R, then t."""
    rows = [*g.R, g.t]
    text = "\n".join(f"{r[0]:.17g} {r[1]:.17g} {r[2]:.17g}" for r in rows)
    Path(path).write_text(text + "\n")


def load_transform(path) -> RigidTransform:
    values = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected three numbers, got {line!r}")
        try:
            values.append([float(p) for p in parts])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric value in {line!r}") from None
    if len(values) != 4:
        raise ValueError(f"{path}: expected 4 rows (R then t), found {len(values)}")
    matrix = np.asarray(values, dtype=np.float64)
    return RigidTransform(matrix[:3], matrix[3])


def load_cloud(path) -> NDArray[np.float64]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty cloud file")
    try:
        count = int(lines[0])
    except ValueError:
        raise ValueError(f"{path}:1: expected a point count, got {lines[0]!r}") from None
    rows = [line for line in lines[1:] if line.strip()]
    if len(rows) != count:
        raise ValueError(f"{path}: count line says {count} points, found {len(rows)}")
    points = np.empty((count, 3), dtype=np.float64)
    for i, row in enumerate(rows):
        parts = row.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{i + 2}: expected 'x y z', got {row!r}")
        try:
            points[i] = [float(p) for p in parts]
        except ValueError:
            raise ValueError(f"{path}:{i + 2}: non-numeric coordinate in {row!r}") from None
    return points
