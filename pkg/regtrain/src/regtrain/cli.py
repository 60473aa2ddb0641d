"""Command-line entry point: train a backbone or a full agent bundle.

Examples:
    regtrain pointlk --out backbone.rgkw --samples 256 --epochs 6
    regtrain reagent --out agent.rgkw --head classifier --seed 3
"""

from __future__ import annotations

import argparse
import sys

from .config import HEAD_CHOICES, TrainConfig
from .data import SHAPE_NAMES
from .train import TrainingDiverged, train_pointlk, train_reagent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regtrain",
        description="Train toy registration networks and export their weights.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("pointlk", "train the feature-alignment backbone"),
        ("reagent", "train the backbone plus both discrete-action heads"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--out", required=True, help="output weight file path")
        cmd.add_argument("--epochs", type=int, default=TrainConfig.epochs)
        cmd.add_argument("--qat-epochs", type=int, default=TrainConfig.qat_epochs,
                         help="quantized fine-tuning epochs (0 disables)")
        cmd.add_argument("--lr", type=float, default=TrainConfig.lr)
        cmd.add_argument("--lr-decay", type=float, default=TrainConfig.lr_decay,
                         help="per-epoch learning-rate multiplier in (0, 1]")
        cmd.add_argument("--qat-lr", type=float, default=TrainConfig.qat_lr)
        cmd.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
        cmd.add_argument("--lambda-pose", type=float,
                         default=TrainConfig.lambda_pose)
        cmd.add_argument("--lambda-feat", type=float,
                         default=TrainConfig.lambda_feat)
        cmd.add_argument("--lambda-head", type=float,
                         default=TrainConfig.lambda_head)
        cmd.add_argument("--bits", type=int, default=TrainConfig.bits)
        cmd.add_argument("--head", choices=HEAD_CHOICES,
                         default=TrainConfig.head)
        cmd.add_argument("--samples", type=int, default=TrainConfig.samples)
        cmd.add_argument("--points", type=int, default=TrainConfig.points)
        cmd.add_argument("--shapes", nargs="+", choices=SHAPE_NAMES,
                         default=list(TrainConfig.shapes))
        cmd.add_argument("--theta-max", type=float,
                         default=TrainConfig.theta_max_deg,
                         help="max per-axis rotation of a pair, degrees")
        cmd.add_argument("--t-max", type=float, default=TrainConfig.t_max)
        cmd.add_argument("--jitter-std", type=float,
                         default=TrainConfig.jitter_std)
        cmd.add_argument("--jitter-clip", type=float,
                         default=TrainConfig.jitter_clip)
        cmd.add_argument("--seed", type=int, default=TrainConfig.seed)
        cmd.add_argument("--rollout-steps", type=int,
                         default=TrainConfig.rollout_steps)
        cmd.add_argument("--quiet", action="store_true",
                         help="suppress per-epoch progress lines")
    return parser


def config_from_args(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        qat_epochs=args.qat_epochs,
        lr=args.lr,
        lr_decay=args.lr_decay,
        qat_lr=args.qat_lr,
        batch_size=args.batch_size,
        lambda_pose=args.lambda_pose,
        lambda_feat=args.lambda_feat,
        lambda_head=args.lambda_head,
        bits=args.bits,
        head=args.head,
        samples=args.samples,
        points=args.points,
        shapes=tuple(args.shapes),
        theta_max_deg=args.theta_max,
        t_max=args.t_max,
        jitter_std=args.jitter_std,
        jitter_clip=args.jitter_clip,
        seed=args.seed,
        rollout_steps=args.rollout_steps,
        verbose=not args.quiet,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        trainer = train_pointlk if args.command == "pointlk" else train_reagent
        path = trainer(cfg, args.out)
    except (ValueError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not args.quiet:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
