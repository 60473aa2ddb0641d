"""Expert supervision for the discrete-action registration agent.

The agent nudges the moved source toward the template with one symmetric
exponential step ladder per axis (translation in units, rotation in
radians). The expert picks, per axis, the ladder step closest to the
remaining residual, breaking ties toward the smaller magnitude and then the
lower label index. Pose updates are disentangled: rotations compose about
the moving cloud's pivot without touching the translation state.
"""

from __future__ import annotations

import numpy as np

from .se3 import euler_xyz_from_matrix, rotation_x, rotation_y, rotation_z

STEP_BASE = 1.0 / 900.0
STEP_LEVELS = 6
NOOP_LABEL = STEP_LEVELS


def step_ladder() -> np.ndarray:
    """The 13 signed step sizes, ordered most-negative to most-positive.

    Six geometric magnitudes base * 3^k on each side of a zero no-op:
    [-0.27 ... -1/900, 0, 1/900 ... 0.27].
    """
    magnitudes = STEP_BASE * 3.0 ** np.arange(STEP_LEVELS)
    return np.concatenate([-magnitudes[::-1], [0.0], magnitudes])


def best_labels(residuals: np.ndarray, ladder: np.ndarray) -> np.ndarray:
    """Per-component ladder label minimizing (|residual - step|, |step|, index)."""
    residuals = np.atleast_1d(np.asarray(residuals, dtype=np.float64))
    labels = [
        min(range(len(ladder)),
            key=lambda k: (abs(r - ladder[k]), abs(ladder[k]), k))
        for r in residuals
    ]
    return np.asarray(labels, dtype=np.intp)


def expert_labels(r_cur: np.ndarray, t_cur: np.ndarray,
                  r_star: np.ndarray, t_star: np.ndarray,
                  ladder: np.ndarray):
    """Greedy per-axis labels steering the current pose toward the target.

    Translation residual is the straight difference; rotation residual is
    the XYZ Euler decomposition of the remaining rotation R* R^T.
    """
    trans_labels = best_labels(t_star - t_cur, ladder)
    rot_residual = euler_xyz_from_matrix(r_star @ r_cur.T)
    rot_labels = best_labels(rot_residual, ladder)
    return trans_labels, rot_labels


def apply_action(r_cur: np.ndarray, t_cur: np.ndarray,
                 trans_labels: np.ndarray, rot_labels: np.ndarray,
                 ladder: np.ndarray):
    """Disentangled update: R <- Rx Ry Rz R, t <- t + steps."""
    rx, ry, rz = (ladder[int(label)] for label in rot_labels)
    r_step = rotation_x(rx) @ rotation_y(ry) @ rotation_z(rz)
    r_new = r_step @ r_cur
    t_new = t_cur + ladder[np.asarray(trans_labels, dtype=np.intp)]
    return r_new, t_new
