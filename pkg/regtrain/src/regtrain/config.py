"""Training configuration shared by the feature-alignment and agent trainers."""

from __future__ import annotations

from dataclasses import dataclass

from .data import SHAPE_NAMES
from .quant_sim import MAX_BITS, MIN_BITS

HEAD_CHOICES = ("classifier", "decoder", "none")

# Hard caps that keep every configuration a CPU-minutes toy run.
MAX_SAMPLES = 2000
MAX_EPOCHS = 20
MAX_POINTS = 1024


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the toy trainers.

    The learning-rate schedule is exponential: epoch e runs at
    ``lr * lr_decay ** e`` during the float phase, and the quantized
    fine-tuning phase runs at the flat rate ``qat_lr``.
    """

    # Optimization schedule.
    epochs: int = 8
    qat_epochs: int = 3
    lr: float = 1e-3
    lr_decay: float = 0.9
    qat_lr: float = 1e-4
    batch_size: int = 16

    # Loss weights: pose error dominates, auxiliary terms stay at unit weight.
    lambda_pose: float = 100.0
    lambda_feat: float = 1.0
    lambda_head: float = 1.0

    # Quantization and auxiliary head.
    bits: int = 8
    head: str = "decoder"

    # Synthetic dataset.
    samples: int = 384
    points: int = 128
    shapes: tuple[str, ...] = ("box", "table")
    theta_max_deg: float = 45.0
    t_max: float = 0.5
    jitter_std: float = 0.01
    jitter_clip: float = 0.05
    seed: int = 0

    # Pose-loss construction and agent rollouts.
    perturb_rot: float = 0.25
    perturb_trans: float = 0.25
    fd_step: float = 0.01
    rollout_steps: int = 10

    verbose: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.epochs <= MAX_EPOCHS:
            raise ValueError(f"epochs must be in 0..{MAX_EPOCHS}, got {self.epochs}")
        if not 0 <= self.qat_epochs <= MAX_EPOCHS:
            raise ValueError(
                f"qat_epochs must be in 0..{MAX_EPOCHS}, got {self.qat_epochs}")
        if self.epochs + self.qat_epochs == 0:
            raise ValueError("at least one training epoch is required")
        for name in ("lr", "qat_lr"):
            value = getattr(self, name)
            if not value > 0.0:
                raise ValueError(f"{name} must be positive, got {value}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("lambda_pose", "lambda_feat", "lambda_head"):
            value = getattr(self, name)
            if value < 0.0:
                raise ValueError(f"{name} must be non-negative, got {value}")
        if not MIN_BITS <= self.bits <= MAX_BITS:
            raise ValueError(
                f"bits must be in {MIN_BITS}..{MAX_BITS}, got {self.bits}")
        if self.head not in HEAD_CHOICES:
            raise ValueError(
                f"head must be one of {HEAD_CHOICES}, got {self.head!r}")
        if not 8 <= self.samples <= MAX_SAMPLES:
            raise ValueError(
                f"samples must be in 8..{MAX_SAMPLES}, got {self.samples}")
        if not 16 <= self.points <= MAX_POINTS:
            raise ValueError(
                f"points must be in 16..{MAX_POINTS}, got {self.points}")
        if not self.shapes:
            raise ValueError("shapes must not be empty")
        for shape in self.shapes:
            if shape not in SHAPE_NAMES:
                raise ValueError(
                    f"unknown shape {shape!r}; choose from {SHAPE_NAMES}")
        if not 0.0 <= self.theta_max_deg <= 180.0:
            raise ValueError(
                f"theta_max_deg must be in [0, 180], got {self.theta_max_deg}")
        if self.t_max < 0.0:
            raise ValueError(f"t_max must be non-negative, got {self.t_max}")
        if self.jitter_std < 0.0:
            raise ValueError(
                f"jitter_std must be non-negative, got {self.jitter_std}")
        if self.jitter_clip < 0.0:
            raise ValueError(
                f"jitter_clip must be non-negative, got {self.jitter_clip}")
        for name in ("perturb_rot", "perturb_trans"):
            value = getattr(self, name)
            if not value > 0.0:
                raise ValueError(f"{name} must be positive, got {value}")
        if not self.fd_step > 0.0:
            raise ValueError(f"fd_step must be positive, got {self.fd_step}")
        if not 1 <= self.rollout_steps <= 32:
            raise ValueError(
                f"rollout_steps must be in 1..32, got {self.rollout_steps}")
