"""Tiled, streaming global-feature extractor.

Per-point network Conv(3->64) -> QuantConv(64->128) -> QuantConv(128->1024)
with quantize/dequantize stages in between and a running channelwise max over
all points. Points are processed in tiles of size B, so peak intermediate
memory depends on B and the layer widths, never on the cloud size N; the
running max makes the tiled result identical to the one-shot computation.

The first convolution stays in full precision; the other two run as pure
integer products between table-quantized activations and weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray

from .lie import RigidTransform, Vec3, apply
from .quant import (
    DEFAULT_BITS,
    DEFAULT_GRANULARITY,
    ActivationTable,
    QuantizedLayer,
    identity_activation_table,
    identity_weight_table,
    quantize_activation,
)

F64: TypeAlias = np.float64
I64: TypeAlias = np.int64

Points: TypeAlias = NDArray[F64]   # (N, 3)
Feature: TypeAlias = NDArray[F64]  # (FEATURE_DIM,)

FEATURE_DIM = 1024
LAYER_DIMS = ((3, 64), (64, 128), (128, 1024))

# Tile sizes of the two shipped accelerator configurations; B stays a free
# runtime parameter everywhere.
DEFAULT_TILE_POINTLK = 2
DEFAULT_TILE_REAGENT = 14


def fold_batch_norm(gamma, beta, mean, var, eps: float = 1e-5):
    """Collapse batch-norm statistics into a per-channel (scale, shift) pair.

    y = gamma * (x - mean) / sqrt(var + eps) + beta == scale * x + shift.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    scale = gamma / np.sqrt(var + eps)
    return scale, beta - scale * mean


@dataclass(frozen=True)
class ChannelAffine:
    """Per-channel scale and shift (batch norm folded at load time)."""

    scale: NDArray[F64]
    shift: NDArray[F64]

    def __post_init__(self) -> None:
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64))
        object.__setattr__(self, "shift", np.asarray(self.shift, dtype=np.float64))
        if self.scale.shape != self.shift.shape or self.scale.ndim != 1:
            raise ValueError("affine scale/shift must be 1-D arrays of equal length")

    @staticmethod
    def identity(n: int) -> "ChannelAffine":
        return ChannelAffine(scale=np.ones(n), shift=np.zeros(n))

    def __call__(self, x: NDArray[F64]) -> NDArray[F64]:
        return x * self.scale + self.shift


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatNetWeights:
    """Real-valued parameters plus quantization scales/tables for the backbone.

    Holding the full-precision weights (rather than only their quantized form)
    lets the same bundle drive both the integer path and the float reference
    path; the integer layers are derived lazily and cached.
    """

    conv1_w: NDArray[F64]   # (64, 3)
    conv1_b: NDArray[F64]   # (64,)
    affine1: ChannelAffine  # 64 channels
    conv2_w: NDArray[F64]   # (128, 64)
    conv2_b: NDArray[F64]   # (128,)
    affine2: ChannelAffine  # 128 channels
    conv3_w: NDArray[F64]   # (1024, 128)
    conv3_b: NDArray[F64]   # (1024,)
    affine3: ChannelAffine  # 1024 channels
    s_a2: float             # activation scale entering conv2
    s_w2: float
    s_a3: float             # activation scale entering conv3
    s_w3: float
    bits: int = DEFAULT_BITS
    act_table2: ActivationTable | None = None
    act_table3: ActivationTable | None = None
    wgt_table2: NDArray[I64] | None = None
    wgt_table3: NDArray[I64] | None = None

    def __post_init__(self) -> None:
        for name in ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "conv3_w", "conv3_b"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        shapes = {
            "conv1_w": (LAYER_DIMS[0][1], LAYER_DIMS[0][0]),
            "conv1_b": (LAYER_DIMS[0][1],),
            "conv2_w": (LAYER_DIMS[1][1], LAYER_DIMS[1][0]),
            "conv2_b": (LAYER_DIMS[1][1],),
            "conv3_w": (LAYER_DIMS[2][1], LAYER_DIMS[2][0]),
            "conv3_b": (LAYER_DIMS[2][1],),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ValueError(f"{name} must have shape {want}, got {got}")
        for affine, width in ((self.affine1, 64), (self.affine2, 128), (self.affine3, 1024)):
            if affine.scale.shape != (width,):
                raise ValueError(f"affine width mismatch: {affine.scale.shape} != ({width},)")

    @cached_property
    def qconv2(self) -> QuantizedLayer:
        table = self.act_table2 or identity_activation_table(self.bits, self.s_a2)
        wt = self.wgt_table2 if self.wgt_table2 is not None else identity_weight_table(self.bits)
        return QuantizedLayer.from_real(
            self.conv2_w, self.conv2_b, s_a=table.scale, s_w=self.s_w2,
            bits=self.bits, activation_table=table, weight_table=wt,
        )

    @cached_property
    def qconv3(self) -> QuantizedLayer:
        table = self.act_table3 or identity_activation_table(self.bits, self.s_a3)
        wt = self.wgt_table3 if self.wgt_table3 is not None else identity_weight_table(self.bits)
        return QuantizedLayer.from_real(
            self.conv3_w, self.conv3_b, s_a=table.scale, s_w=self.s_w3,
            bits=self.bits, activation_table=table, weight_table=wt,
        )

    @staticmethod
    def random(seed: int, bits: int = DEFAULT_BITS,
               calibration_points: int = 256) -> "FeatNetWeights":
        """Random backbone with activation scales calibrated on a probe cloud.

        Weight scales are set to the actual weight maxima (no weight clipping)
        and activation scales to the maxima observed on a deterministic probe
        cloud, the usual post-training-quantization recipe.
        """
        rng = np.random.default_rng(seed)
        conv1_w = rng.normal(scale=1.0 / np.sqrt(3), size=(64, 3))
        conv1_b = rng.normal(scale=0.05, size=64)
        conv2_w = rng.normal(scale=1.0 / np.sqrt(64), size=(128, 64))
        conv2_b = rng.normal(scale=0.05, size=128)
        conv3_w = rng.normal(scale=1.0 / np.sqrt(128), size=(1024, 128))
        conv3_b = rng.normal(scale=0.05, size=1024)
        affine1 = ChannelAffine(rng.uniform(0.5, 1.5, 64), rng.uniform(-0.1, 0.1, 64))
        affine2 = ChannelAffine(rng.uniform(0.5, 1.5, 128), rng.uniform(-0.1, 0.1, 128))
        affine3 = ChannelAffine(rng.uniform(0.5, 1.5, 1024), rng.uniform(-0.1, 0.1, 1024))

        probe = rng.normal(size=(calibration_points, 3))
        probe /= np.abs(probe).max()
        h1 = _conv1_forward(probe, conv1_w, conv1_b)
        a1 = np.maximum(affine1(h1), 0.0)
        s_a2 = float(a1.max()) or 1.0
        h2 = a1 @ conv2_w.T + conv2_b
        a2 = np.maximum(affine2(h2), 0.0)
        s_a3 = float(a2.max()) or 1.0

        return FeatNetWeights(
            conv1_w=conv1_w, conv1_b=conv1_b, affine1=affine1,
            conv2_w=conv2_w, conv2_b=conv2_b, affine2=affine2,
            conv3_w=conv3_w, conv3_b=conv3_b, affine3=affine3,
            s_a2=s_a2, s_w2=float(np.abs(conv2_w).max()),
            s_a3=s_a3, s_w3=float(np.abs(conv3_w).max()),
            bits=bits,
        )

    def to_tensors(self) -> dict[str, np.ndarray]:
        """Flatten to the named-tensor schema used by the weight container."""
        tensors = {
            "conv1.weight": self.conv1_w.astype(np.float32),
            "conv1.bias": self.conv1_b.astype(np.float32),
            "stage1.scale": self.affine1.scale.astype(np.float32),
            "stage1.bias": self.affine1.shift.astype(np.float32),
            "conv2.weight": self.conv2_w.astype(np.float32),
            "conv2.bias": self.conv2_b.astype(np.float32),
            "stage2.scale": self.affine2.scale.astype(np.float32),
            "stage2.bias": self.affine2.shift.astype(np.float32),
            "conv3.weight": self.conv3_w.astype(np.float32),
            "conv3.bias": self.conv3_b.astype(np.float32),
            "stage3.scale": self.affine3.scale.astype(np.float32),
            "stage3.bias": self.affine3.shift.astype(np.float32),
            "conv2.act.scale": np.array([self.s_a2], dtype=np.float32),
            "conv2.wgt.scale": np.array([self.s_w2], dtype=np.float32),
            "conv3.act.scale": np.array([self.s_a3], dtype=np.float32),
            "conv3.wgt.scale": np.array([self.s_w3], dtype=np.float32),
            "meta.bits": np.array([self.bits], dtype=np.uint8),
        }
        if self.act_table2 is not None:
            tensors["conv2.act.lut"] = _lut_to_storage(self.act_table2.entries)
        if self.act_table3 is not None:
            tensors["conv3.act.lut"] = _lut_to_storage(self.act_table3.entries)
        if self.wgt_table2 is not None:
            tensors["conv2.wgt.lut"] = _lut_to_storage(self.wgt_table2, signed=True)
        if self.wgt_table3 is not None:
            tensors["conv3.wgt.lut"] = _lut_to_storage(self.wgt_table3, signed=True)
        return tensors

    @staticmethod
    def from_tensors(tensors: dict[str, np.ndarray]) -> "FeatNetWeights":
        """Rebuild from the named-tensor schema; lookup tables are optional."""
        bits = int(tensors["meta.bits"][0])
        s_a2 = float(tensors["conv2.act.scale"][0])
        s_a3 = float(tensors["conv3.act.scale"][0])

        def table(name: str, scale: float) -> ActivationTable | None:
            if name not in tensors:
                return None
            return ActivationTable(
                bits=bits,
                entries=np.asarray(tensors[name], dtype=np.int64),
                scale=scale,
            )

        def wgt_table(name: str) -> NDArray[I64] | None:
            if name not in tensors:
                return None
            return np.asarray(tensors[name], dtype=np.int64)

        return FeatNetWeights(
            conv1_w=tensors["conv1.weight"], conv1_b=tensors["conv1.bias"],
            affine1=ChannelAffine(tensors["stage1.scale"], tensors["stage1.bias"]),
            conv2_w=tensors["conv2.weight"], conv2_b=tensors["conv2.bias"],
            affine2=ChannelAffine(tensors["stage2.scale"], tensors["stage2.bias"]),
            conv3_w=tensors["conv3.weight"], conv3_b=tensors["conv3.bias"],
            affine3=ChannelAffine(tensors["stage3.scale"], tensors["stage3.bias"]),
            s_a2=s_a2, s_w2=float(tensors["conv2.wgt.scale"][0]),
            s_a3=s_a3, s_w3=float(tensors["conv3.wgt.scale"][0]),
            bits=bits,
            act_table2=table("conv2.act.lut", s_a2),
            act_table3=table("conv3.act.lut", s_a3),
            wgt_table2=wgt_table("conv2.wgt.lut"),
            wgt_table3=wgt_table("conv3.wgt.lut"),
        )


def _lut_to_storage(entries: NDArray[I64], signed: bool = False) -> np.ndarray:
    """Smallest container dtype that holds the table exactly."""
    entries = np.asarray(entries)
    if signed:
        return entries.astype(np.int8) if np.abs(entries).max() <= 127 else entries.astype(np.float32)
    return entries.astype(np.uint8) if entries.max() <= 255 else entries.astype(np.float32)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def _conv1_forward(tile: Points, w: NDArray[F64], b: NDArray[F64]) -> NDArray[F64]:
    """First convolution with a fixed summation order.

    Written as three explicit rank-1 updates instead of a matrix product so
    the per-point result is bit-identical for every tile partition (BLAS may
    pick different kernels per shape, which would break the exactness
    guarantee of the integer path downstream).
    """
    return (tile[:, 0:1] * w[:, 0] + tile[:, 1:2] * w[:, 1]
            + tile[:, 2:3] * w[:, 2] + b)


def layer_forward_quant(tile: NDArray[I64], layer: QuantizedLayer) -> NDArray[I64]:
    """Exact integer product of a (B, m) quantized tile with layer weights."""
    tile = np.asarray(tile, dtype=np.int64)
    if tile.ndim != 2 or tile.shape[1] != layer.in_features:
        raise ValueError(
            f"tile shape {tile.shape} incompatible with layer ({layer.out_features}, {layer.in_features})"
        )
    if tile.min(initial=0) < 0 or tile.max(initial=0) > layer.table.q_a:
        raise ValueError(f"tile entries must lie in [0, {layer.table.q_a}]")
    return layer.integer_product(tile)


def quant_stage(
    tile: np.ndarray,
    dequant: tuple[NDArray[F64], float] | None = None,
    affine: ChannelAffine | None = None,
    relu: bool = False,
    next_table: ActivationTable | None = None,
) -> np.ndarray:
    """Between-convolution processing: dequantize, affine, ReLU, requantize.

    Pieces are applied in exactly that order; every argument is optional so
    the same function covers each pipeline position (with all arguments
    absent it is the identity).
    """
    x = np.asarray(tile, dtype=np.float64)
    if dequant is not None:
        bias, s_aw = dequant
        x = bias + s_aw * x
    if affine is not None:
        x = affine(x)
    if relu:
        x = np.maximum(x, 0.0)
    if next_table is not None:
        return quantize_activation(x, next_table)
    return x


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class ExtractionStats:
    """Observability for the memory claim: tile count and peak buffer bytes."""

    tiles: int
    peak_tile_buffer_bytes: int


def _check_cloud(cloud) -> Points:
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise ValueError(f"expected a non-empty (N, 3) cloud, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("cloud coordinates must be finite")
    return pts


def extract(
    cloud: Points,
    weights: FeatNetWeights,
    transform: RigidTransform | None = None,
    pivot: Vec3 | None = None,
    tile_size: int = DEFAULT_TILE_POINTLK,
    quantized: bool = True,
) -> Feature:
    """Global feature of a (transformed) cloud; see extract_with_stats."""
    feature, _ = extract_with_stats(cloud, weights, transform, pivot, tile_size, quantized)
    return feature


def extract_with_stats(
    cloud: Points,
    weights: FeatNetWeights,
    transform: RigidTransform | None = None,
    pivot: Vec3 | None = None,
    tile_size: int = DEFAULT_TILE_POINTLK,
    quantized: bool = True,
) -> tuple[Feature, ExtractionStats]:
    """Stream the cloud through the network in tiles of tile_size points.

    The optional rigid transform is applied to each tile right before the
    first convolution (with pivot set, rotation acts about that point). The
    global feature accumulator starts at -inf and takes a running channelwise
    max over ceil(N / B) tiles; the result is independent of tile order and
    identical to the one-shot computation.
    """
    pts = _check_cloud(cloud)
    if tile_size < 1:
        raise ValueError(f"tile size must be >= 1, got {tile_size}")
    n = pts.shape[0]
    feature = np.full(FEATURE_DIM, -np.inf, dtype=np.float64)
    peak = 0
    tiles = 0
    for start in range(0, n, tile_size):
        tile = pts[start:start + tile_size]
        if transform is not None:
            tile = apply(transform, tile, mu=pivot)
        psi, tile_peak = _tile_features(tile, weights, quantized)
        feature = np.maximum(feature, psi.max(axis=0))
        peak = max(peak, tile_peak)
        tiles += 1
    return feature, ExtractionStats(tiles=tiles, peak_tile_buffer_bytes=peak)


def _tile_features(tile: Points, w: FeatNetWeights, quantized: bool) -> tuple[NDArray[F64], int]:
    """Per-point features for one tile plus that tile's peak buffer footprint."""
    h1 = _conv1_forward(tile, w.conv1_w, w.conv1_b)
    if quantized:
        q2 = quant_stage(h1, affine=w.affine1, relu=True, next_table=w.qconv2.table)
        z2 = layer_forward_quant(q2, w.qconv2)
        q3 = quant_stage(z2, dequant=(w.qconv2.bias, w.qconv2.s_aw),
                         affine=w.affine2, relu=True, next_table=w.qconv3.table)
        z3 = layer_forward_quant(q3, w.qconv3)
        psi = quant_stage(z3, dequant=(w.qconv3.bias, w.qconv3.s_aw),
                          affine=w.affine3, relu=True)
        buffers = (tile, h1, q2, z2, q3, z3, psi)
    else:
        a1 = quant_stage(h1, affine=w.affine1, relu=True)
        h2 = a1 @ w.conv2_w.T + w.conv2_b
        a2 = quant_stage(h2, affine=w.affine2, relu=True)
        h3 = a2 @ w.conv3_w.T + w.conv3_b
        psi = quant_stage(h3, affine=w.affine3, relu=True)
        buffers = (tile, h1, a1, h2, a2, h3, psi)
    return psi, sum(b.nbytes for b in buffers)
