"""Lookup-table integer quantization: scale/clip, table indexing, integer
accumulation with deferred rescale.

A quantized layer carries integer weights, an activation lookup table, a bias,
and one combined output scale. Activations are scaled/clipped to [0, 1] and
mapped through a fine-grained table (granularity K sub-steps per output
level); weights are scaled/clipped to [-1, 1] and mapped through a signed
table of the same granularity. The matrix product then runs entirely in
integers and a single multiply by the combined scale recovers the real-valued
output, so the expensive inner loop never touches floating point.

Tables are immutable after construction; every operation here is pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray

F64: TypeAlias = np.float64
I64: TypeAlias = np.int64

# Sub-steps per quantization level. The table resolves K candidate inputs per
# output level, which is what makes learned (non-uniform) tables expressive.
DEFAULT_GRANULARITY = 9

# Supported table bit-widths; 8 matches the shipped accelerator configuration.
MIN_BITS = 4
MAX_BITS = 10
DEFAULT_BITS = 8


def activation_levels(bits: int) -> int:
    """Number of non-zero activation levels Q_a for an unsigned bits-wide code."""
    return (1 << bits) - 1


def weight_levels(bits: int) -> int:
    """Magnitude of the largest weight level Q_w for a signed bits-wide code."""
    return (1 << (bits - 1)) - 1


def round_half_away(x) -> NDArray[I64]:
    """Round to nearest integer with exact halves going away from zero.

    numpy's round() ties to even, which would bake a different convention
    into the tables than the one the trained-table exporter must follow.
    """
    x = np.asarray(x, dtype=np.float64)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


def _validate_bits(bits: int) -> None:
    if not MIN_BITS <= bits <= MAX_BITS:
        raise ValueError(f"bits must be in {MIN_BITS}..{MAX_BITS}, got {bits}")


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActivationTable:
    """Monotone lookup table from clipped-activation index to quantized level.

    entries has length K*Q_a + 1 (one slot per sub-step of [0, 1] inclusive),
    each entry in [0, Q_a], non-decreasing. scale s_a is the real-valued
    activation magnitude that maps to full code.
    """

    bits: int
    entries: NDArray[I64]
    scale: float
    granularity: int = DEFAULT_GRANULARITY

    def __post_init__(self) -> None:
        _validate_bits(self.bits)
        object.__setattr__(self, "entries", np.asarray(self.entries, dtype=np.int64))
        q_a = activation_levels(self.bits)
        expected = self.granularity * q_a + 1
        if self.entries.shape != (expected,):
            raise ValueError(
                f"activation table must have {expected} entries, got {self.entries.shape}"
            )
        if self.entries[0] < 0 or self.entries[-1] > q_a:
            raise ValueError(f"table entries must lie in [0, {q_a}]")
        if np.any(np.diff(self.entries) < 0):
            raise ValueError("activation table entries must be non-decreasing")
        if not self.scale > 0.0:
            raise ValueError(f"activation scale must be positive, got {self.scale}")

    @property
    def q_a(self) -> int:
        return activation_levels(self.bits)


def identity_activation_table(
    bits: int = DEFAULT_BITS,
    scale: float = 1.0,
    granularity: int = DEFAULT_GRANULARITY,
) -> ActivationTable:
    """Table that reduces lookup quantization to plain uniform quantization.

    entries[i] = round(i / K), so index i (the sub-step count) collapses to
    the nearest whole level. Trained tables replace this mapping.
    """
    q_a = activation_levels(bits)
    idx = np.arange(granularity * q_a + 1, dtype=np.float64)
    return ActivationTable(
        bits=bits,
        entries=round_half_away(idx / granularity),
        scale=scale,
        granularity=granularity,
    )


def identity_weight_table(
    bits: int = DEFAULT_BITS,
    granularity: int = DEFAULT_GRANULARITY,
) -> NDArray[I64]:
    """Signed analogue of the identity activation table.

    Length 2*K*Q_w + 1; table[i] = round(i / K) - Q_w, covering [-Q_w, Q_w].
    """
    q_w = weight_levels(bits)
    idx = np.arange(2 * granularity * q_w + 1, dtype=np.float64)
    return round_half_away(idx / granularity) - q_w


# ---------------------------------------------------------------------------
# Elementwise quantizers
# ---------------------------------------------------------------------------

def quantize_activation(x, table: ActivationTable):
    """Quantize activations through a lookup table; scalar in, scalar out.

    The input is scaled by 1/s_a, clipped to [0, 1], resolved to one of
    K*Q_a + 1 sub-steps, and looked up. Clipping makes every input valid.
    """
    arr = np.asarray(x, dtype=np.float64)
    clipped = np.clip(arr / table.scale, 0.0, 1.0)
    index = round_half_away(table.granularity * table.q_a * clipped)
    out = table.entries[index]
    return int(out) if np.isscalar(x) else out


def quantize_weight(w, s_w: float, weight_table: NDArray[I64],
                    granularity: int = DEFAULT_GRANULARITY):
    """Quantize weights through a signed lookup table; scalar in, scalar out.

    The input is scaled by 1/s_w, clipped to [-1, 1], shifted to [0, 2], and
    resolved to one of 2*K*Q_w + 1 sub-steps before lookup.
    """
    weight_table = np.asarray(weight_table, dtype=np.int64)
    q_w = (len(weight_table) - 1) // (2 * granularity)
    if len(weight_table) != 2 * granularity * q_w + 1:
        raise ValueError(
            f"weight table length {len(weight_table)} does not match granularity {granularity}"
        )
    arr = np.asarray(w, dtype=np.float64)
    clipped = np.clip(arr / s_w, -1.0, 1.0)
    index = round_half_away(granularity * q_w * (clipped + 1.0))
    out = weight_table[index]
    return int(out) if np.isscalar(w) else out


# ---------------------------------------------------------------------------
# Integer product and rescale
# ---------------------------------------------------------------------------

def accumulator_width(bits_a: int, bits_w: int, m: int) -> int:
    """Bits needed for the worst-case dot product of length m."""
    return bits_a + bits_w + int(np.ceil(np.log2(m)))


def integer_accumulate(qx, qw, bits_a: int = DEFAULT_BITS,
                       bits_w: int = DEFAULT_BITS) -> int:
    """Exact integer dot product of a quantized activation row with a weight row.

    Runs in 64-bit integers; the declared hardware width
    bits_a + bits_w + ceil(log2 m) is asserted, not enforced by storage.
    """
    qx = np.asarray(qx, dtype=np.int64)
    qw = np.asarray(qw, dtype=np.int64)
    if qx.shape != qw.shape:
        raise ValueError(f"length mismatch: {qx.shape} vs {qw.shape}")
    acc = int(qx @ qw)
    width = accumulator_width(bits_a, bits_w, max(1, qx.size))
    assert abs(acc) < (1 << width), (
        f"accumulator {acc} exceeds declared {width}-bit width"
    )
    return acc


def dequantize(acc, bias, s_aw: float):
    """Recover the real-valued output: bias + s_aw * acc."""
    return bias + s_aw * np.asarray(acc, dtype=np.float64)


def combined_scale(s_a: float, s_w: float, bits_a: int, bits_w: int) -> float:
    """Combined output scale s_aw = s_a*s_w / (Q_a*Q_w)."""
    return s_a * s_w / (activation_levels(bits_a) * weight_levels(bits_w))


# ---------------------------------------------------------------------------
# Quantized layer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuantizedLayer:
    """One fully-integer linear stage: n x m integer weights, real bias,
    activation table for the incoming values, and the combined scale."""

    weights: NDArray[I64]        # (n, m) signed integers in [-Q_w, Q_w]
    bias: NDArray[F64]           # (n,)
    s_aw: float
    table: ActivationTable
    s_w: float
    bits_w: int = DEFAULT_BITS

    def __post_init__(self) -> None:
        _validate_bits(self.bits_w)
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.int64))
        object.__setattr__(self, "bias", np.asarray(self.bias, dtype=np.float64))
        if self.weights.ndim != 2:
            raise ValueError("weights must be an (n, m) matrix")
        n = self.weights.shape[0]
        if self.bias.shape != (n,):
            raise ValueError(f"bias must have shape ({n},)")
        q_w = weight_levels(self.bits_w)
        if np.abs(self.weights).max(initial=0) > q_w:
            raise ValueError(f"weight entries must lie in [-{q_w}, {q_w}]")
        expected = combined_scale(self.table.scale, self.s_w, self.table.bits, self.bits_w)
        if not np.isclose(self.s_aw, expected, rtol=1e-12):
            raise ValueError(
                f"s_aw {self.s_aw} inconsistent with stored scales (expected {expected})"
            )

    @property
    def out_features(self) -> int:
        return self.weights.shape[0]

    @property
    def in_features(self) -> int:
        return self.weights.shape[1]

    @cached_property
    def _weights_f64_t(self) -> NDArray[F64]:
        return self.weights.T.astype(np.float64)

    @cached_property
    def _width_limit(self) -> int:
        return 1 << accumulator_width(self.table.bits, self.bits_w, self.in_features)

    @cached_property
    def _f64_product_exact(self) -> bool:
        # Largest possible accumulator magnitude m*Q_a*Q_w below 2^53 means
        # every partial sum is an exactly representable float64 integer.
        return (self.in_features * self.table.q_a
                * weight_levels(self.bits_w)) < 2**53

    def integer_product(self, qx: NDArray[I64]) -> NDArray[I64]:
        """Exact (..., m) x (n, m)^T integer accumulation, returned as int64.

        When every possible accumulator value fits float64's integer range,
        the product runs through BLAS on float64 copies; the result then
        equals int64 arithmetic bit for bit regardless of summation order —
        and regardless of batch shape, which the tiled pipeline relies on.
        """
        if self._f64_product_exact:
            acc = (np.asarray(qx, dtype=np.float64) @ self._weights_f64_t).astype(np.int64)
        else:
            acc = np.asarray(qx, dtype=np.int64) @ self.weights.T
        assert np.abs(acc).max(initial=0) < self._width_limit, (
            "accumulator exceeds the declared hardware width"
        )
        return acc

    @staticmethod
    def from_real(
        weights: NDArray[F64],
        bias: NDArray[F64],
        s_a: float,
        s_w: float,
        bits: int = DEFAULT_BITS,
        activation_table: ActivationTable | None = None,
        weight_table: NDArray[I64] | None = None,
        granularity: int = DEFAULT_GRANULARITY,
    ) -> "QuantizedLayer":
        """Quantize a real-valued linear layer with the given (or identity) tables."""
        if activation_table is None:
            activation_table = identity_activation_table(bits, s_a, granularity)
        if weight_table is None:
            weight_table = identity_weight_table(bits, granularity)
        q = quantize_weight(np.asarray(weights, dtype=np.float64), s_w,
                            weight_table, granularity)
        return QuantizedLayer(
            weights=q,
            bias=bias,
            s_aw=combined_scale(activation_table.scale, s_w, activation_table.bits, bits),
            table=activation_table,
            s_w=s_w,
            bits_w=bits,
        )

    def forward(self, x: NDArray[F64]) -> NDArray[F64]:
        """Full quantized pipeline for a (..., m) batch of real activations."""
        qx = quantize_activation(np.asarray(x, dtype=np.float64), self.table)
        return dequantize(self.integer_product(qx), self.bias, self.s_aw)
