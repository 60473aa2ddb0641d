"""Analytic performance/resource models and design-space exploration.

Models a streaming hardware implementation of the two registration pipelines
at the granularity of pipeline stages: each stage processes one B-point tile
with configurable point-level (P_p) and output-level (P_o) loop unrolling.
From a handful of calibration constants (loop initiation interval, fixed
loop overhead, per-element costs of the non-convolution stages, and fixed
costs for the solver blocks) the model predicts cycle counts, operation
counts, off-chip traffic, and DSP/BRAM/URAM usage, and a brute-force search
finds the fastest design point that fits a resource budget.

Conventions baked into the resource model:
* Weight buffers are partitioned just enough that dual-ported 36-bit-wide
  memory blocks sustain P_o parallel lanes per cycle.
* Inter-stage streams are shift-register FIFOs, not block RAM.
* The quantization lookup table is duplicated per processing element.
* The actor's quantized weight matrices map to URAM; everything else,
  including the float output layer, stays in BRAM.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

# Memory block geometry: a block RAM holds 18 Kb at up to 36 bits per port;
# the URAM variant holds 288 Kb at up to 72 bits. Both are dual-ported.
BRAM_BITS = 18_432
BRAM_MAX_WIDTH = 36
URAM_BITS = 294_912
URAM_MAX_WIDTH = 72

DEFAULT_FREQUENCY_HZ = 200.0e6
DEFAULT_BANDWIDTH_BYTES = 3.2e9

BYTES_PER_POINT = 16        # xyz as three 32-bit words plus padding, per point
TRANSFORM_BYTES = 48        # one rigid transform (3x4 of 32-bit words)

FEATURE_WIDTH = 1024
STATE_WIDTH = 2 * FEATURE_WIDTH


@dataclass(frozen=True, slots=True)
class ResourceBudget:
    """Available device resources and the usable fraction of each."""

    dsp: int = 1728
    bram: int = 312
    uram: int = 96
    cap: float = 0.80

    def __post_init__(self) -> None:
        if not 0.0 < self.cap <= 1.0:
            raise ValueError(f"cap must be in (0, 1], got {self.cap}")
        if min(self.dsp, self.bram, self.uram) < 0:
            raise ValueError("resource totals must be non-negative")

    def admits(self, dsp: int, bram: int, uram: int) -> bool:
        return (dsp <= self.cap * self.dsp
                and bram <= self.cap * self.bram
                and uram <= self.cap * self.uram)


ZCU104 = ResourceBudget()


@dataclass(frozen=True, slots=True)
class ModelConstants:
    """Calibration constants for the stage and solver models.

    The defaults reproduce the latency and resource figures the model was
    calibrated against (see configs/dse.cfg, written by
    scripts/calibrate_dse.py); they are deliberately plain integers so a
    config file can override every one of them.
    """

    ii_loop: int = 1            # initiation interval of the inner reduction loop
    c_loop: int = 10            # fixed overhead per unrolled loop body
    c_quant: int = 1            # cycles per element, table stages
    c_transform: int = 15       # cycles per point, pose stage
    c_maxpool: int = 1          # cycles per element, pooling stage
    c_pinv: int = 20484         # fixed cycles, blockwise 6x6 inversion
    c_update: int = 1303        # fixed cycles, twist update
    eta_conv: int = 3           # DSPs per PE, float convolution
    eta_quantconv: int = 1      # DSPs per PE, integer convolution
    dsp_quant: int = 2          # DSPs per PE, table stages (dequantize+affine)
    dsp_transform: int = 30     # fixed DSPs, pose stage
    dsp_pinv: int = 60          # fixed DSPs, 6x6 inversion
    dsp_update: int = 30        # fixed DSPs, twist update
    ops_pinv: int = 74000       # operation count of the 6x6 inversion
    ops_update: int = 500       # operation count of the twist update
    ops_transform: int = 24     # operations per point, pose stage
    ops_quant: int = 4          # operations per element, table stages
    ops_maxpool: int = 1        # operations per element, pooling stage
    frequency_hz: float = DEFAULT_FREQUENCY_HZ
    bandwidth_bytes: float = DEFAULT_BANDWIDTH_BYTES


def load_constants(path) -> ModelConstants:
    """Read `key = value` lines (# comments allowed) into ModelConstants."""
    known = {f.name: f.type for f in fields(ModelConstants)}
    overrides: dict[str, int | float] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown constant {key!r}")
        overrides[key] = float(value) if known[key] == "float" else int(value)
    return replace(ModelConstants(), **overrides)


# ---------------------------------------------------------------------------
# Memory primitives
# ---------------------------------------------------------------------------

def bram_blocks(s: int, w: int, P: int, uram: bool = False) -> int:
    """Memory blocks needed for `s` entries of `w` bits at partition factor P.

    Each of the P partitions rounds up to whole blocks of ceil(w / port
    width) width-stacked units, so partitioning can only hold or increase
    the total.
    """
    if min(s, w, P) < 1:
        raise ValueError(f"s, w, P must all be >= 1, got {(s, w, P)}")
    capacity, max_width = (URAM_BITS, URAM_MAX_WIDTH) if uram else (BRAM_BITS, BRAM_MAX_WIDTH)
    stack = math.ceil(w / max_width)
    return P * math.ceil(s * w / (P * stack * capacity)) * stack


def _weight_partition(p_o: int, w_bits: int, uram: bool = False) -> int:
    """Partitions needed so dual-ported blocks feed P_o lanes of w_bits each."""
    max_width = URAM_MAX_WIDTH if uram else BRAM_MAX_WIDTH
    return max(1, math.ceil(p_o * w_bits / (2 * max_width)))


def lut_size(b_a: int, K: int = 9) -> int:
    """Entries in one activation lookup table."""
    return K * ((1 << b_a) - 1) + 1


def quantconv_buffer_bits(m: int, n: int, b_w: int = 8, b_a: int = 8,
                          b_v: int = 32, K: int = 9) -> int:
    """On-chip parameter bits for a quantized convolution stage.

    Integer weights, the activation lookup table, full-precision biases, and
    one full-precision output scale.
    """
    if min(m, n, b_w, b_a, b_v, K) < 1:
        raise ValueError("all dimensions must be positive")
    return b_w * m * n + b_a * lut_size(b_a, K) + b_v * n + b_v


def conv_buffer_bits(m: int, n: int, b_v: int = 32) -> int:
    """On-chip parameter bits for the same stage kept in full precision."""
    if min(m, n, b_v) < 1:
        raise ValueError("all dimensions must be positive")
    return b_v * m * n + b_v * n


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Stage:
    """One streaming pipeline stage processing a B-point tile.

    `m` is the reduction depth for convolution kinds and unused otherwise;
    `n` is the output (or elementwise) width.
    """

    name: str
    kind: str                   # transform | conv | quantconv | quant | maxpool
    n: int
    m: int = 0

    def latency(self, B: int, p_p: int, p_o: int, c: ModelConstants) -> int:
        point_groups = math.ceil(B / p_p)
        out_groups = math.ceil(self.n / p_o)
        if self.kind == "transform":
            return point_groups * c.c_transform + c.c_loop
        if self.kind in ("conv", "quantconv"):
            return point_groups * out_groups * (c.ii_loop * (self.m - 1) + c.c_loop)
        if self.kind == "quant":
            return point_groups * out_groups * c.c_quant + c.c_loop
        if self.kind == "maxpool":
            return point_groups * out_groups * c.c_maxpool + c.c_loop
        raise ValueError(f"unknown stage kind {self.kind!r}")

    def ops_per_point(self, c: ModelConstants) -> int:
        if self.kind == "transform":
            return c.ops_transform
        if self.kind in ("conv", "quantconv"):
            return 2 * self.m * self.n
        if self.kind == "quant":
            return c.ops_quant * self.n
        return c.ops_maxpool * self.n

    def dsp(self, p_p: int, p_o: int, c: ModelConstants) -> int:
        if self.kind == "transform":
            return c.dsp_transform
        if self.kind == "conv":
            return c.eta_conv * p_p * p_o
        if self.kind == "quantconv":
            return c.eta_quantconv * p_p * p_o
        if self.kind == "quant":
            return c.dsp_quant * p_p * p_o
        return 0

    def bram(self, p_p: int, p_o: int, bits_a: int, bits_w: int) -> int:
        if self.kind == "conv":
            return (bram_blocks(self.m * self.n, 32, _weight_partition(p_o, 32))
                    + bram_blocks(self.n, 32, 1))
        if self.kind == "quantconv":
            return (bram_blocks(self.m * self.n, bits_w, _weight_partition(p_o, bits_w))
                    + bram_blocks(self.n, 32, 1))
        if self.kind == "quant":
            copies = p_p * p_o
            return bram_blocks(copies * lut_size(bits_a), bits_a, copies)
        if self.kind == "maxpool":
            return bram_blocks(self.n, 32, _weight_partition(p_o, 32))
        return 0


FEATNET_STAGES = (
    Stage("transform", "transform", n=3),
    Stage("conv1", "conv", n=64, m=3),
    Stage("quant64", "quant", n=64),
    Stage("quantconv2", "quantconv", n=128, m=64),
    Stage("quant128", "quant", n=128),
    Stage("quantconv3", "quantconv", n=1024, m=128),
    Stage("maxpool", "maxpool", n=1024),
)
DOMINANT_STAGE = "quantconv3"


def _divisors(n: int) -> tuple[int, ...]:
    return tuple(d for d in range(1, n + 1) if n % d == 0)


def _powers_of_two(limit: int) -> tuple[int, ...]:
    out = []
    p = 1
    while p <= limit:
        out.append(p)
        p *= 2
    return tuple(out)


def balance_stage(stage: Stage, B: int, budget_cycles: int, c: ModelConstants) -> tuple[int, int]:
    """Smallest unroll factors bringing a stage within the latency budget.

    Point-level unrolling grows first (over divisors of B), then output-level
    unrolling (over powers of two dividing the width), mirroring how the
    dominant stage's latency is matched in practice. Falls back to maximum
    unrolling if the budget is unreachable.
    """
    for p_p in _divisors(B):
        if stage.latency(B, p_p, 1, c) <= budget_cycles:
            return (p_p, 1)
    for p_o in _powers_of_two(stage.n):
        if stage.latency(B, B, p_o, c) <= budget_cycles:
            return (B, p_o)
    return (B, stage.n)


def pipeline_cycles(stage_latencies, tiles: int) -> int:
    """Total cycles of a `tiles`-deep pipeline with the given stage latencies."""
    if tiles < 1:
        raise ValueError(f"tiles must be >= 1, got {tiles}")
    latencies = list(stage_latencies)
    return (tiles - 1) * max(latencies) + sum(latencies)


# ---------------------------------------------------------------------------
# Core models
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class CoreModel:
    """Modeled totals for one run of a pipeline or solver core."""

    ops: int
    cycles: int
    bytes: int
    dsp: int
    bram: int
    uram: int
    stage_factors: tuple[tuple[str, int, int], ...] = field(repr=False, default=())

    def milliseconds(self, frequency_hz: float = DEFAULT_FREQUENCY_HZ) -> float:
        return 1e3 * self.cycles / frequency_hz


def _validate_factors(N: int, B: int, p_p: int, p_o: int) -> None:
    if N < 1 or B < 1 or B > N:
        raise ValueError(f"need 1 <= B <= N, got B={B}, N={N}")
    if B % p_p != 0:
        raise ValueError(f"P_p must divide B, got P_p={p_p}, B={B}")
    dominant = next(s for s in FEATNET_STAGES if s.name == DOMINANT_STAGE)
    if dominant.n % p_o != 0:
        raise ValueError(f"P_o must divide {dominant.n}, got {p_o}")


def featnet_model(N: int, B: int, p_p: int, p_o: int,
                  c: ModelConstants = ModelConstants(),
                  bits_a: int = 8, bits_w: int = 8) -> CoreModel:
    """Model one full feature extraction of an N-point cloud.

    (p_p, p_o) are the dominant stage's unroll factors; every other stage is
    balanced against its latency. Off-chip traffic is the input cloud alone
    (BYTES_PER_POINT per point) -- weights and the feature stay on chip.
    """
    _validate_factors(N, B, p_p, p_o)
    dominant = next(s for s in FEATNET_STAGES if s.name == DOMINANT_STAGE)
    budget = dominant.latency(B, p_p, p_o, c)

    factors: list[tuple[str, int, int]] = []
    latencies: list[int] = []
    ops_per_point = 0
    dsp = 0
    bram = 0
    for stage in FEATNET_STAGES:
        sf = (p_p, p_o) if stage.name == DOMINANT_STAGE else balance_stage(stage, B, budget, c)
        factors.append((stage.name, *sf))
        latencies.append(stage.latency(B, *sf, c))
        ops_per_point += stage.ops_per_point(c)
        dsp += stage.dsp(*sf, c)
        bram += stage.bram(*sf, bits_a, bits_w)

    tiles = math.ceil(N / B)
    return CoreModel(
        ops=N * ops_per_point,
        cycles=pipeline_cycles(latencies, tiles),
        bytes=BYTES_PER_POINT * N,
        dsp=dsp,
        bram=bram,
        uram=0,
        stage_factors=tuple(factors),
    )


def pointlk_model(N: int, B: int, p_p: int, p_o: int,
                  c: ModelConstants = ModelConstants(),
                  i_jacobi: int = 12, i_max: int = 20,
                  bits_a: int = 8, bits_w: int = 8) -> CoreModel:
    """Model a full solve of the feature-difference solver.

    The template feature plus i_jacobi perturbed features build the Jacobian,
    then each of up to i_max iterations extracts one feature and runs the
    twist update; the 6x6 inversion happens once. Each extraction re-streams
    the cloud, and every iteration returns one transform.
    """
    if i_jacobi not in (6, 12):
        raise ValueError(f"i_jacobi must be 6 or 12, got {i_jacobi}")
    if i_max < 0:
        raise ValueError(f"i_max must be >= 0, got {i_max}")
    feat = featnet_model(N, B, p_p, p_o, c, bits_a, bits_w)
    solver_bram = (
        bram_blocks(6 * FEATURE_WIDTH, 32, 1)       # Jacobian pseudoinverse rows
        + 3 * bram_blocks(FEATURE_WIDTH, 32, 1)     # template / moved / residual
    )
    return CoreModel(
        ops=(i_jacobi + 1) * feat.ops + c.ops_pinv + i_max * (feat.ops + c.ops_update),
        cycles=(i_jacobi + 1) * feat.cycles + c.c_pinv + i_max * (feat.cycles + c.c_update),
        bytes=(i_jacobi + i_max + 1) * feat.bytes + (i_max + 1) * TRANSFORM_BYTES,
        dsp=feat.dsp + c.dsp_pinv + c.dsp_update,
        bram=feat.bram + solver_bram,
        uram=0,
        stage_factors=feat.stage_factors,
    )


ACTOR_STAGES = (
    Stage("quant2048", "quant", n=STATE_WIDTH),
    Stage("fc1", "quantconv", n=512, m=STATE_WIDTH),
    Stage("quant512", "quant", n=512),
    Stage("fc2", "quantconv", n=256, m=512),
    Stage("quant256", "quant", n=256),
    Stage("fc3", "conv", n=39, m=256),
)
ACTOR_DOMINANT = "fc1"


def actor_model(p_actor: int, c: ModelConstants = ModelConstants(),
                bits_a: int = 8, bits_w: int = 8,
                n_labels: int = 13) -> CoreModel:
    """Model one head of the action network (layers run back to back).

    `p_actor` unrolls the dominant quantized layer's outputs; the other
    layers balance against it. The quantized weight matrices live in URAM,
    so the BRAM term covers only the float output layer, biases, and tables.
    """
    if 512 % p_actor != 0:
        raise ValueError(f"p_actor must divide 512, got {p_actor}")
    stages = ACTOR_STAGES[:-1] + (
        Stage("fc3", "conv", n=3 * n_labels, m=256),
    )
    dominant = next(s for s in stages if s.name == ACTOR_DOMINANT)
    budget = dominant.latency(1, 1, p_actor, c)

    cycles = 0
    ops = 0
    dsp = 0
    bram = 0
    uram = 0
    factors: list[tuple[str, int, int]] = []
    for stage in stages:
        sf = (1, p_actor) if stage.name == ACTOR_DOMINANT else balance_stage(stage, 1, budget, c)
        factors.append((stage.name, *sf))
        cycles += stage.latency(1, *sf, c)   # sequential, not pipelined
        ops += stage.ops_per_point(c)
        dsp += stage.dsp(*sf, c)
        if stage.kind == "quantconv":
            uram += bram_blocks(stage.m * stage.n, bits_w,
                                _weight_partition(sf[1], bits_w, uram=True), uram=True)
            bram += bram_blocks(stage.n, 32, 1)  # bias
        else:
            bram += stage.bram(*sf, bits_a, bits_w)
    return CoreModel(ops=ops, cycles=cycles, bytes=0, dsp=dsp, bram=bram,
                     uram=uram, stage_factors=tuple(factors))


def reagent_model(N: int, B: int, p_p: int, p_o: int, p_actor: int,
                  c: ModelConstants = ModelConstants(),
                  i_max: int = 10, bits_a: int = 8, bits_w: int = 8) -> CoreModel:
    """Model a full solve of the discrete-action solver.

    One template extraction, then i_max iterations of one extraction plus
    both actor heads. The heads share DSP by time-multiplexing but each keeps
    its own weight memories; every iteration also streams the cloud in and a
    transform out.
    """
    if i_max < 0:
        raise ValueError(f"i_max must be >= 0, got {i_max}")
    feat = featnet_model(N, B, p_p, p_o, c, bits_a, bits_w)
    actor = actor_model(p_actor, c, bits_a, bits_w)
    feature_bram = 2 * bram_blocks(FEATURE_WIDTH, 32, 1)  # template + moved source
    return CoreModel(
        ops=feat.ops + i_max * (feat.ops + 2 * actor.ops),
        cycles=feat.cycles + i_max * (feat.cycles + 2 * actor.cycles),
        bytes=(i_max + 1) * (feat.bytes + TRANSFORM_BYTES),
        dsp=feat.dsp + actor.dsp + c.dsp_update,
        bram=feat.bram + 2 * actor.bram + feature_bram,
        uram=2 * actor.uram,
        stage_factors=feat.stage_factors + actor.stage_factors,
    )


# ---------------------------------------------------------------------------
# Roofline
# ---------------------------------------------------------------------------

def roofline(ops: float, cycles: float, data_bytes: float,
             frequency_hz: float = DEFAULT_FREQUENCY_HZ,
             bandwidth_bytes: float = DEFAULT_BANDWIDTH_BYTES) -> tuple[float, str]:
    """Attainable performance and its limiting factor.

    Computes the compute throughput ops/(cycles/f) and the memory ceiling
    (ops/bytes) * bandwidth; returns their minimum in ops/s and "compute"
    when the compute throughput is the smaller of the two, else "memory".
    """
    if min(ops, cycles, data_bytes) <= 0:
        raise ValueError("ops, cycles, and data_bytes must be positive")
    compute = ops / (cycles / frequency_hz)
    memory = (ops / data_bytes) * bandwidth_bytes
    if compute < memory:
        return compute, "compute"
    return memory, "memory"


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class DesignPoint:
    """One evaluated configuration of the search space."""

    B: int
    p_p: int
    p_o: int
    p_actor: int | None
    model: CoreModel
    feasible: bool

    @property
    def key(self) -> tuple[int, int, int, int]:
        return (self.B, self.p_p, self.p_o, self.p_actor or 0)


@dataclass(frozen=True, slots=True)
class SearchGrids:
    """Candidate factor lists; every (B, P_p) pair must satisfy P_p | B."""

    tile_sizes: tuple[int, ...]
    output_factors: tuple[int, ...]
    actor_factors: tuple[int, ...] = (1,)


def default_grids(N: int, model: str, max_tile: int = 64) -> SearchGrids:
    """Divisor/power-of-two grids bounded the way the pinned designs were."""
    return SearchGrids(
        tile_sizes=tuple(b for b in _divisors(N) if b <= max_tile),
        output_factors=_powers_of_two(1024),
        actor_factors=_powers_of_two(512) if model == "reagent" else (1,),
    )


@dataclass(frozen=True, slots=True)
class ExploreResult:
    best: DesignPoint | None
    points: tuple[DesignPoint, ...]

    @property
    def feasible_count(self) -> int:
        return sum(p.feasible for p in self.points)


def explore(budget: ResourceBudget, model: str, grids: SearchGrids,
            c: ModelConstants = ModelConstants(), N: int = 1024,
            **model_kwargs) -> ExploreResult:
    """Brute-force scan of the grids; returns every point plus the argmin.

    Feasibility means every resource fits under cap * total. Among feasible
    points the fewest-cycles one wins; exact ties resolve lexicographically
    on (B, P_p, P_o, P_actor), so the result is order-independent.
    """
    if model not in ("pointlk", "reagent"):
        raise ValueError(f"model must be 'pointlk' or 'reagent', got {model!r}")
    points: list[DesignPoint] = []
    for B in grids.tile_sizes:
        for p_p in _divisors(B):
            for p_o in grids.output_factors:
                for p_actor in grids.actor_factors:
                    if model == "pointlk":
                        core = pointlk_model(N, B, p_p, p_o, c, **model_kwargs)
                        actor = None
                    else:
                        core = reagent_model(N, B, p_p, p_o, p_actor, c, **model_kwargs)
                        actor = p_actor
                    feasible = budget.admits(core.dsp, core.bram, core.uram)
                    points.append(DesignPoint(B=B, p_p=p_p, p_o=p_o, p_actor=actor,
                                              model=core, feasible=feasible))

    feasible_points = [p for p in points if p.feasible]
    best = min(feasible_points, key=lambda p: (p.model.cycles, p.key), default=None)
    return ExploreResult(best=best, points=tuple(points))


def frontier_rows(result: ExploreResult,
                  frequency_hz: float = DEFAULT_FREQUENCY_HZ) -> list[dict]:
    """Flatten an exploration into CSV-ready rows with the documented columns."""
    rows = []
    for p in result.points:
        rows.append({
            "B": p.B,
            "P_p": p.p_p,
            "P_o": p.p_o,
            "P_actor": p.p_actor if p.p_actor is not None else "",
            "C_cycles": p.model.cycles,
            "ms": round(p.model.milliseconds(frequency_hz), 6),
            "DSP": p.model.dsp,
            "BRAM": p.model.bram,
            "URAM": p.model.uram,
            "feasible": int(p.feasible),
        })
    return rows
