"""Command-line entry points: pair generation, registration, benchmarks,
design-space exploration, and weight-file utilities.

Every command is seed-deterministic: with the same arguments and seed, the
primary outputs (clouds, transforms, weight files, metric values, frontier
tables) are byte-identical run to run. Wall-clock timing columns in
`benchmark` output are the one documented exception.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from .dse import (
    ModelConstants,
    ResourceBudget,
    default_grids,
    explore,
    frontier_rows,
    load_constants,
)
from .featnet import FeatNetWeights, extract
from .icp import icp_pt2pt
from .lie import apply
from .metrics import chamfer, iso_error
from .oracle import moment_feature
from .pairs import (
    SHAPE_NAMES,
    PairSpec,
    base_shape,
    gen_pair,
    load_cloud,
    load_transform,
    save_cloud,
    save_transform,
)
from .pointlk import JACOBIAN_METHODS, LkOptions
from .pointlk import register as register_pointlk
from .reagent import DEFAULT_ITERS as REAGENT_ITERS
from .reagent import ActorWeights
from .reagent import register as register_reagent
from .weights import (
    bundle_from_file,
    bundle_to_file,
    featnet_from_file,
    read_file,
)

FRONTIER_COLUMNS = ("B", "P_p", "P_o", "P_actor", "C_cycles", "ms",
                    "DSP", "BRAM", "URAM", "feasible")
REGISTER_COLUMNS = ("method", "backbone", "points", "iterations", "converged",
                    "iso_rot_deg", "iso_trans", "chamfer")
BENCHMARK_COLUMNS = ("method", "backbone", "N", "trial", "seed", "seconds",
                     "iso_rot_deg", "iso_trans")


class CliError(Exception):
    """A user-facing command error (bad combination of flags, bad file)."""


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def _trial_seed(master: int, index: int) -> int:
    """Stable per-trial seed derived from (master seed, trial index)."""
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def _cmd_gen(args) -> int:
    if args.base is not None:
        base = load_cloud(args.base)
    else:
        base = base_shape(args.shape, max(args.base_points, args.points), seed=0)
    spec = PairSpec(
        n_points=args.points,
        theta_max_deg=args.theta_max,
        t_max=args.t_max,
        r_std=args.jitter_std,
        r_clip=args.jitter_clip,
        seed=args.seed,
    )
    source, template, g_star = gen_pair(spec, base)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    source_path = prefix.with_name(prefix.name + ".source.xyz")
    template_path = prefix.with_name(prefix.name + ".template.xyz")
    truth_path = prefix.with_name(prefix.name + ".truth.txt")
    save_cloud(source_path, source)
    save_cloud(template_path, template)
    save_transform(truth_path, g_star)
    print(f"wrote {source_path}, {template_path}, {truth_path}")
    return 0


# ---------------------------------------------------------------------------
# register
# ---------------------------------------------------------------------------

def _moment_extractor(points):
    return moment_feature(points)


def _backbone_extractor(args, weights: FeatNetWeights | None = None):
    if args.backbone == "moments":
        return _moment_extractor
    if weights is None:
        if args.weights:
            # Backbone-only files and full actor bundles both carry the
            # feature-network tensors; actor heads are loaded separately.
            weights = featnet_from_file(args.weights)
        else:
            weights = FeatNetWeights.random(seed=args.seed, bits=args.bits)
    tile = args.tile

    def extractor(points):
        return extract(points, weights, tile_size=tile)

    return extractor


def _run_registration(args, source, template):
    if args.method == "icp":
        return icp_pt2pt(source, template, max_iters=args.iters or 50)
    if args.method == "pointlk":
        opts = LkOptions(max_iters=args.iters or 20, method=args.jacobian)
        return register_pointlk(source, template, _backbone_extractor(args), opts)
    # reagent: needs the 2048-wide state, i.e. the network backbone + actors
    if args.backbone != "pointnet":
        raise CliError("--method reagent requires --backbone pointnet")
    if not args.weights:
        raise CliError("--method reagent requires --weights with actor heads")
    backbone, trans_head, rot_head = bundle_from_file(args.weights)
    extractor = _backbone_extractor(args, weights=backbone)
    return register_reagent(
        source, template, extractor, actors=(trans_head, rot_head),
        max_iters=args.iters or REAGENT_ITERS,
    )


def _cmd_register(args) -> int:
    source = load_cloud(args.source)
    template = load_cloud(args.template)
    truth = load_transform(args.truth) if args.truth else None

    result = _run_registration(args, source, template)

    for i, value in enumerate(result.history, start=1):
        print(f"iter {i:3d}  {value:.9g}")
    print(f"converged: {result.converged} after {result.iterations} iterations")
    for row in result.G.R:
        print(f"R  {_fmt(row[0])} {_fmt(row[1])} {_fmt(row[2])}")
    print(f"t  {_fmt(result.G.t[0])} {_fmt(result.G.t[1])} {_fmt(result.G.t[2])}")

    cd = chamfer(apply(result.G, source), template)
    rot_deg = trans = None
    if truth is not None:
        rot_deg, trans = iso_error(result.G, truth)
        print(f"iso_rot_deg {_fmt(rot_deg)}")
        print(f"iso_trans   {_fmt(trans)}")
    print(f"chamfer     {_fmt(cd)}")

    if args.out:
        with open(args.out, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(REGISTER_COLUMNS)
            writer.writerow([
                args.method, args.backbone, len(source), result.iterations,
                int(result.converged),
                _fmt(rot_deg) if rot_deg is not None else "",
                _fmt(trans) if trans is not None else "",
                _fmt(cd),
            ])
        print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

def _cmd_benchmark(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s]
    if not sizes or any(n < 4 for n in sizes):
        raise CliError(f"--sizes must list integers >= 4, got {args.sizes!r}")
    rows = []
    index = 0
    for n_points in sizes:
        base = base_shape(args.shape, 2 * n_points, seed=0)
        for trial in range(args.trials):
            seed = _trial_seed(args.seed, index)
            index += 1
            spec = PairSpec(
                n_points=n_points, theta_max_deg=args.theta_max, t_max=args.t_max,
                r_std=args.jitter_std, r_clip=args.jitter_clip, seed=seed,
            )
            source, template, g_star = gen_pair(spec, base)
            start = time.perf_counter()
            result = _run_registration(args, source, template)
            seconds = time.perf_counter() - start
            rot_deg, trans = iso_error(result.G, g_star)
            rows.append([args.method, args.backbone, n_points, trial, seed,
                         f"{seconds:.6f}", _fmt(rot_deg), _fmt(trans)])
            print(f"{args.method:8s} N={n_points:<6d} trial {trial}: "
                  f"{seconds * 1e3:8.2f} ms  rot {rot_deg:9.4f} deg")
    if args.out:
        with open(args.out, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(BENCHMARK_COLUMNS)
            writer.writerows(rows)
        print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# dse
# ---------------------------------------------------------------------------

def _cmd_dse(args) -> int:
    constants = load_constants(args.config) if args.config else ModelConstants()
    budget = ResourceBudget(dsp=args.dsp, bram=args.bram, uram=args.uram, cap=args.cap)
    grids = default_grids(args.n_points, args.model, max_tile=args.max_tile)
    if args.model == "pointlk":
        kwargs = {"i_jacobi": args.jacobi, "i_max": args.iters or 20}
    else:
        kwargs = {"i_max": args.iters or 10}
    result = explore(budget, args.model, grids, constants, N=args.n_points, **kwargs)

    if args.out:
        with open(args.out, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=FRONTIER_COLUMNS)
            writer.writeheader()
            writer.writerows(frontier_rows(result, constants.frequency_hz))
        print(f"wrote {args.out} ({len(result.points)} points, "
              f"{result.feasible_count} feasible)")

    if result.best is None:
        print("no feasible design point under the given budget")
        return 1
    best = result.best
    actor = f" P_actor={best.p_actor}" if best.p_actor is not None else ""
    print(f"best: B={best.B} P_p={best.p_p} P_o={best.p_o}{actor}  "
          f"{best.model.cycles} cycles = "
          f"{best.model.milliseconds(constants.frequency_hz):.3f} ms  "
          f"DSP {best.model.dsp}  BRAM {best.model.bram}  URAM {best.model.uram}")
    return 0


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------

def _cmd_weights_gen_random(args) -> int:
    seeds = np.random.SeedSequence(args.seed).generate_state(3)
    backbone = FeatNetWeights.random(seed=int(seeds[0]), bits=args.bits)
    trans_head = ActorWeights.random(seed=int(seeds[1]), n_labels=args.labels,
                                     bits=args.bits)
    rot_head = ActorWeights.random(seed=int(seeds[2]), n_labels=args.labels,
                                   bits=args.bits)
    bundle_to_file(args.out, backbone, trans_head, rot_head)
    print(f"wrote {args.out}")
    return 0


def _cmd_weights_inspect(args) -> int:
    tensors = read_file(args.file)
    total = 0
    print(f"{'name':40s} {'dtype':8s} {'shape':16s} {'bytes':>10s}")
    for name, array in tensors.items():
        total += array.nbytes
        print(f"{name:40s} {str(array.dtype):8s} "
              f"{'x'.join(map(str, array.shape)):16s} {array.nbytes:>10d}")
    print(f"{len(tensors)} tensors, {total} bytes of data")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_pair_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--shape", choices=SHAPE_NAMES, default="box")
    parser.add_argument("--theta-max", type=float, default=45.0,
                        help="max Euler angle per axis, degrees")
    parser.add_argument("--t-max", type=float, default=0.5)
    parser.add_argument("--jitter-std", type=float, default=0.01)
    parser.add_argument("--jitter-clip", type=float, default=0.05)


def _add_method_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--method", choices=("pointlk", "reagent", "icp"),
                        default="pointlk")
    parser.add_argument("--backbone", choices=("moments", "pointnet"),
                        default="moments")
    parser.add_argument("--jacobian", choices=JACOBIAN_METHODS, default="central")
    parser.add_argument("--bits", type=int, default=8)
    parser.add_argument("--tile", type=int, default=2)
    parser.add_argument("--iters", type=int, default=None,
                        help="iteration budget (default: per-method)")
    parser.add_argument("--weights", default=None, help="weight bundle file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regkit",
        description="Correspondence-free point cloud registration toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic registration pair")
    _add_pair_flags(gen)
    gen.add_argument("--points", type=int, default=1024)
    gen.add_argument("--base-points", type=int, default=4096)
    gen.add_argument("--base", default=None, help="optional base cloud file")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out-prefix", required=True)
    gen.set_defaults(func=_cmd_gen)

    reg = sub.add_parser("register", help="register a source cloud onto a template")
    reg.add_argument("--source", required=True)
    reg.add_argument("--template", required=True)
    reg.add_argument("--truth", default=None, help="ground-truth transform file")
    _add_method_flags(reg)
    reg.add_argument("--seed", type=int, default=0,
                     help="seed for untrained random weights")
    reg.add_argument("--out", default=None, help="metrics CSV")
    reg.set_defaults(func=_cmd_register)

    bench = sub.add_parser("benchmark", help="time registration across cloud sizes")
    _add_pair_flags(bench)
    _add_method_flags(bench)
    bench.add_argument("--sizes", default="512,1024,2048,4096,8192")
    bench.add_argument("--trials", type=int, default=3)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", default=None, help="timing CSV")
    bench.set_defaults(func=_cmd_benchmark)

    dse = sub.add_parser("dse", help="search accelerator design points")
    dse.add_argument("--model", choices=("pointlk", "reagent"), required=True)
    dse.add_argument("--config", default=None, help="model-constants file")
    dse.add_argument("--n-points", type=int, default=1024)
    dse.add_argument("--cap", type=float, default=0.80)
    dse.add_argument("--dsp", type=int, default=1728)
    dse.add_argument("--bram", type=int, default=312)
    dse.add_argument("--uram", type=int, default=96)
    dse.add_argument("--max-tile", type=int, default=64)
    dse.add_argument("--iters", type=int, default=None)
    dse.add_argument("--jacobi", type=int, choices=(6, 12), default=12)
    dse.add_argument("--out", default=None, help="frontier CSV")
    dse.set_defaults(func=_cmd_dse)

    weights = sub.add_parser("weights", help="weight-file utilities")
    wsub = weights.add_subparsers(dest="weights_command", required=True)

    wgen = wsub.add_parser("gen-random", help="write a random untrained bundle")
    wgen.add_argument("--seed", type=int, default=0)
    wgen.add_argument("--bits", type=int, default=8)
    wgen.add_argument("--labels", type=int, default=13)
    wgen.add_argument("--out", required=True)
    wgen.set_defaults(func=_cmd_weights_gen_random)

    winspect = wsub.add_parser("inspect", help="list the tensors in a weight file")
    winspect.add_argument("file")
    winspect.set_defaults(func=_cmd_weights_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
