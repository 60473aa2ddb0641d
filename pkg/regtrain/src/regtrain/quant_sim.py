"""Training-time lookup-table quantization with straight-through gradients.

The deployed integer pipeline quantizes activations and weights through
monotone lookup tables: an input is scaled into [0, 1] (activations) or
[-1, 1] (weights), resolved to one of K sub-steps per level, and mapped by
the table to an integer level in [0, Q_a] or [-Q_w, Q_w]. Training simulates
that pipeline in floating point ("fake quantization"): the same index
computation, but table entries are continuous and learnable.

Gradients: the quantizer passes input gradients straight through wherever
the pre-clip value is in range (the straight-through estimator), and each
table entry accumulates the gradients of the values that looked it up. After
every optimizer step the entries are projected back onto the valid set
(monotone non-decreasing, within the level range), so exporting is just
rounding.
"""

from __future__ import annotations

import numpy as np

# Sub-steps per quantization level in the lookup tables.
GRANULARITY = 9

MIN_BITS = 4
MAX_BITS = 10
DEFAULT_BITS = 8


def activation_levels(bits: int) -> int:
    """Largest activation code Q_a for an unsigned bits-wide level."""
    return (1 << bits) - 1


def weight_levels(bits: int) -> int:
    """Largest weight magnitude Q_w for a signed bits-wide level."""
    return (1 << (bits - 1)) - 1


def round_half_away(x) -> np.ndarray:
    """Round to nearest with exact halves away from zero (the table convention)."""
    x = np.asarray(x, dtype=np.float64)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


def _validate_bits(bits: int) -> None:
    if not MIN_BITS <= bits <= MAX_BITS:
        raise ValueError(f"bits must be in {MIN_BITS}..{MAX_BITS}, got {bits}")


def identity_act_entries(bits: int, dtype=np.float64) -> np.ndarray:
    """Float copy of the identity activation table: entries[i] = round(i / K)."""
    q_a = activation_levels(bits)
    idx = np.arange(GRANULARITY * q_a + 1, dtype=np.float64)
    return round_half_away(idx / GRANULARITY).astype(dtype)


def identity_wgt_entries(bits: int, dtype=np.float64) -> np.ndarray:
    """Float copy of the identity weight table: entries[i] = round(i / K) - Q_w."""
    q_w = weight_levels(bits)
    idx = np.arange(2 * GRANULARITY * q_w + 1, dtype=np.float64)
    return (round_half_away(idx / GRANULARITY) - q_w).astype(dtype)


def monotone_project(entries: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Project onto non-decreasing sequences within [lo, hi].

    Averages the running-max and running-min envelopes; both are
    non-decreasing, so their mean is too, and already-monotone inputs pass
    through unchanged (no systematic upward or downward drift).
    """
    forward = np.maximum.accumulate(entries)
    backward = np.minimum.accumulate(entries[::-1])[::-1]
    return np.clip((forward + backward) / 2.0, lo, hi).astype(entries.dtype)


class ActQuant:
    """Learnable activation quantizer: clip to [0, scale], look up, rescale.

    forward(x) returns the fake-quantized value scale * T[idx] / Q_a and a
    context for backward; backward routes gradients straight through for
    in-range inputs and scatters per-entry table gradients.
    """

    def __init__(self, bits: int, scale: float, entries: np.ndarray | None = None,
                 dtype=np.float64):
        _validate_bits(bits)
        if not scale > 0.0:
            raise ValueError(f"activation scale must be positive, got {scale}")
        self.bits = bits
        self.scale = float(scale)
        self.q = activation_levels(bits)
        self.entries = (identity_act_entries(bits, dtype) if entries is None
                        else np.asarray(entries, dtype=dtype).copy())
        expected = GRANULARITY * self.q + 1
        if self.entries.shape != (expected,):
            raise ValueError(f"activation table must have {expected} entries, "
                             f"got {self.entries.shape}")

    def forward(self, x: np.ndarray):
        scaled = x / x.dtype.type(self.scale)
        clipped = np.clip(scaled, 0.0, 1.0)
        idx = round_half_away(GRANULARITY * self.q * clipped)
        out = self.entries[idx] * x.dtype.type(self.scale / self.q)
        in_range = (scaled >= 0.0) & (scaled <= 1.0)
        return out.astype(x.dtype, copy=False), (idx, in_range)

    def backward(self, dout: np.ndarray, ctx):
        idx, in_range = ctx
        dx = np.where(in_range, dout, 0.0).astype(dout.dtype, copy=False)
        dentries = np.bincount(
            idx.ravel(), weights=np.asarray(dout, dtype=np.float64).ravel(),
            minlength=len(self.entries),
        ) * (self.scale / self.q)
        return dx, dentries.astype(self.entries.dtype)

    def project(self) -> None:
        self.entries = monotone_project(self.entries, 0.0, float(self.q))

    def export(self) -> np.ndarray:
        """Rounded integer table in the smallest exact container dtype."""
        rounded = np.clip(round_half_away(self.entries.astype(np.float64)), 0, self.q)
        return rounded.astype(np.uint8) if self.q <= 255 else rounded.astype(np.float32)

    def harden(self) -> None:
        """Snap entries to their exported integer values (deployed semantics)."""
        self.entries = np.clip(
            round_half_away(self.entries.astype(np.float64)), 0, self.q
        ).astype(self.entries.dtype)


class WgtQuant:
    """Learnable weight quantizer: clip to [-scale, scale], look up, rescale."""

    def __init__(self, bits: int, scale: float, entries: np.ndarray | None = None,
                 dtype=np.float64):
        _validate_bits(bits)
        if not scale > 0.0:
            raise ValueError(f"weight scale must be positive, got {scale}")
        self.bits = bits
        self.scale = float(scale)
        self.q = weight_levels(bits)
        self.entries = (identity_wgt_entries(bits, dtype) if entries is None
                        else np.asarray(entries, dtype=dtype).copy())
        expected = 2 * GRANULARITY * self.q + 1
        if self.entries.shape != (expected,):
            raise ValueError(f"weight table must have {expected} entries, "
                             f"got {self.entries.shape}")

    def forward(self, w: np.ndarray):
        scaled = w / w.dtype.type(self.scale)
        clipped = np.clip(scaled, -1.0, 1.0)
        idx = round_half_away(GRANULARITY * self.q * (clipped + 1.0))
        out = self.entries[idx] * w.dtype.type(self.scale / self.q)
        in_range = np.abs(scaled) <= 1.0
        return out.astype(w.dtype, copy=False), (idx, in_range)

    def backward(self, dout: np.ndarray, ctx):
        idx, in_range = ctx
        dw = np.where(in_range, dout, 0.0).astype(dout.dtype, copy=False)
        dentries = np.bincount(
            idx.ravel(), weights=np.asarray(dout, dtype=np.float64).ravel(),
            minlength=len(self.entries),
        ) * (self.scale / self.q)
        return dw, dentries.astype(self.entries.dtype)

    def project(self) -> None:
        self.entries = monotone_project(self.entries, -float(self.q), float(self.q))

    def export(self) -> np.ndarray:
        rounded = np.clip(round_half_away(self.entries.astype(np.float64)), -self.q, self.q)
        return rounded.astype(np.int8) if self.q <= 127 else rounded.astype(np.float32)

    def harden(self) -> None:
        self.entries = np.clip(
            round_half_away(self.entries.astype(np.float64)), -self.q, self.q
        ).astype(self.entries.dtype)


class QuantPair:
    """The (activation, weight) quantizer pair guarding one integer layer."""

    def __init__(self, act: ActQuant, wgt: WgtQuant):
        if act.bits != wgt.bits:
            raise ValueError("activation and weight quantizers must share a bit width")
        self.act = act
        self.wgt = wgt

    def project(self) -> None:
        self.act.project()
        self.wgt.project()

    def harden(self) -> None:
        self.act.harden()
        self.wgt.harden()
