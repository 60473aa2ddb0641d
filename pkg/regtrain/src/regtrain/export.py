"""Serialization of trained networks into the runtime weight container.

Tensor names, shapes, dtypes, and insertion order follow the runtime's
published schema exactly, so a consumer that loads the file and re-packs it
reproduces the bytes verbatim. Lookup tables are always exported (identity
tables when no quantized fine-tuning ran), which keeps the file
self-describing: the consumer never has to guess the table convention.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import rgkw
from .nets import Actor, Backbone

TRANSLATION_HEAD_PREFIX = "actor.trans"
ROTATION_HEAD_PREFIX = "actor.rot"

_BACKBONE_WIDTHS = (64, 128, 1024)


def _f32(array: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(array, dtype=np.float32))


def _scalar(value: float) -> np.ndarray:
    return np.array([value], dtype=np.float32)


def backbone_tensors(backbone: Backbone) -> dict[str, np.ndarray]:
    """Named tensors for the feature extractor, in the schema order.

    The linear-stage biases are exported as zeros: the per-channel affine
    shift that follows each product already plays that role, so the trainer
    never gives the products their own bias.
    """
    if backbone.quant2 is None or backbone.quant3 is None:
        raise ValueError("backbone must carry calibrated quantizers to export")
    p = backbone.params
    q2, q3 = backbone.quant2, backbone.quant3
    d1, d2, d3 = _BACKBONE_WIDTHS
    return {
        "conv1.weight": _f32(p["w1"]),
        "conv1.bias": np.zeros(d1, dtype=np.float32),
        "stage1.scale": _f32(p["scale1"]),
        "stage1.bias": _f32(p["shift1"]),
        "conv2.weight": _f32(p["w2"]),
        "conv2.bias": np.zeros(d2, dtype=np.float32),
        "stage2.scale": _f32(p["scale2"]),
        "stage2.bias": _f32(p["shift2"]),
        "conv3.weight": _f32(p["w3"]),
        "conv3.bias": np.zeros(d3, dtype=np.float32),
        "stage3.scale": _f32(p["scale3"]),
        "stage3.bias": _f32(p["shift3"]),
        "conv2.act.scale": _scalar(q2.act.scale),
        "conv2.wgt.scale": _scalar(q2.wgt.scale),
        "conv3.act.scale": _scalar(q3.act.scale),
        "conv3.wgt.scale": _scalar(q3.wgt.scale),
        "meta.bits": np.array([q2.act.bits], dtype=np.uint8),
        "conv2.act.lut": q2.act.export(),
        "conv3.act.lut": q3.act.export(),
        "conv2.wgt.lut": q2.wgt.export(),
        "conv3.wgt.lut": q3.wgt.export(),
    }


def actor_tensors(actor: Actor, prefix: str) -> dict[str, np.ndarray]:
    """Named tensors for one policy head under ``prefix``, in schema order."""
    if actor.quant1 is None or actor.quant2 is None:
        raise ValueError("actor must carry calibrated quantizers to export")
    p = actor.params
    q1, q2 = actor.quant1, actor.quant2
    return {
        f"{prefix}.fc1.weight": _f32(p["w1"]),
        f"{prefix}.fc1.bias": _f32(p["b1"]),
        f"{prefix}.fc2.weight": _f32(p["w2"]),
        f"{prefix}.fc2.bias": _f32(p["b2"]),
        f"{prefix}.fc3.weight": _f32(p["w3"]),
        f"{prefix}.fc3.bias": _f32(p["b3"]),
        f"{prefix}.fc1.act.scale": _scalar(q1.act.scale),
        f"{prefix}.fc1.wgt.scale": _scalar(q1.wgt.scale),
        f"{prefix}.fc2.act.scale": _scalar(q2.act.scale),
        f"{prefix}.fc2.wgt.scale": _scalar(q2.wgt.scale),
        f"{prefix}.meta.bits": np.array([q1.act.bits], dtype=np.uint8),
        f"{prefix}.fc1.act.lut": q1.act.export(),
        f"{prefix}.fc2.act.lut": q2.act.export(),
        f"{prefix}.fc1.wgt.lut": q1.wgt.export(),
        f"{prefix}.fc2.wgt.lut": q2.wgt.export(),
    }


def write_backbone(path, backbone: Backbone) -> Path:
    path = Path(path)
    rgkw.write_file(path, backbone_tensors(backbone))
    return path


def write_bundle(path, backbone: Backbone, actor_trans: Actor,
                 actor_rot: Actor) -> Path:
    """Backbone plus both policy heads in one container."""
    tensors = backbone_tensors(backbone)
    tensors.update(actor_tensors(actor_trans, TRANSLATION_HEAD_PREFIX))
    tensors.update(actor_tensors(actor_rot, ROTATION_HEAD_PREFIX))
    path = Path(path)
    rgkw.write_file(path, tensors)
    return path
