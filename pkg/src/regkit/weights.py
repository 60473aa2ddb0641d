"""Binary container for network weights (the .rgkw format).

Layout, all little-endian, no padding or alignment:

    magic   4 bytes  b"RGKW"
    version u16      currently 1
    count   u32      number of tensors
    then per tensor, in file order:
        name_len u16      byte length of the UTF-8 name (1..65535)
        name     bytes    UTF-8, unique within the file
        dtype    u8       0 = f32 (IEEE 754 single), 1 = i8, 2 = u8
        rank     u8       number of dimensions (1..8)
        dims     u32 x rank
        data     prod(dims) * itemsize bytes, C contiguous

Scale, bias, and lookup-table tensors use the reserved name suffixes
`.scale`, `.bias`, and `.lut`. Tensors keep their insertion order, so
writing the same mapping twice produces byte-identical files.
"""

from __future__ import annotations

import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from .featnet import FeatNetWeights
from .reagent import ActorWeights

MAGIC = b"RGKW"
VERSION = 1
MAX_RANK = 8

_TAG_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("i1"), 2: np.dtype("u1")}
_KIND_TO_TAG = {("f", 4): 0, ("i", 1): 1, ("u", 1): 2}

TRANSLATION_HEAD_PREFIX = "actor.trans"
ROTATION_HEAD_PREFIX = "actor.rot"


class WeightFormatError(ValueError):
    """A byte stream does not parse as a valid weight container."""


def _tag_for(name: str, array: np.ndarray) -> int:
    tag = _KIND_TO_TAG.get((array.dtype.kind, array.dtype.itemsize))
    if tag is None:
        raise WeightFormatError(
            f"tensor {name!r} has dtype {array.dtype}, expected float32, int8, or uint8"
        )
    return tag


def pack(tensors: Mapping[str, np.ndarray]) -> bytes:
    """Serialize name->array to container bytes, preserving order."""
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    seen: set[str] = set()
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        if not 1 <= len(encoded) <= 0xFFFF:
            raise WeightFormatError(f"tensor name {name!r} must encode to 1..65535 bytes")
        if name in seen:
            raise WeightFormatError(f"duplicate tensor name {name!r}")
        seen.add(name)
        array = np.asarray(array)
        if not 1 <= array.ndim <= MAX_RANK:
            raise WeightFormatError(
                f"tensor {name!r} has rank {array.ndim}, expected 1..{MAX_RANK}"
            )
        tag = _tag_for(name, array)
        data = np.ascontiguousarray(array.astype(_TAG_TO_DTYPE[tag], copy=False))
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", tag, array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(data.tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise WeightFormatError(
                f"truncated container: need {n} bytes for {what} at offset {self.offset}, "
                f"have {len(self.data) - self.offset}"
            )
        out = self.data[self.offset:self.offset + n]
        self.offset += n
        return out

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def unpack(data: bytes) -> dict[str, np.ndarray]:
    """Parse container bytes back into an ordered name->array mapping."""
    reader = _Reader(data)
    if reader.take(4, "magic") != MAGIC:
        raise WeightFormatError("bad magic: not a RGKW weight container")
    version, count = reader.unpack("<HI", "header")
    if version != VERSION:
        raise WeightFormatError(f"unsupported container version {version}")

    tensors: dict[str, np.ndarray] = {}
    for index in range(count):
        (name_len,) = reader.unpack("<H", f"name length of tensor {index}")
        if name_len == 0:
            raise WeightFormatError(f"tensor {index} has an empty name")
        try:
            name = reader.take(name_len, f"name of tensor {index}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightFormatError(f"tensor {index} name is not valid UTF-8") from exc
        if name in tensors:
            raise WeightFormatError(f"duplicate tensor name {name!r}")
        tag, rank = reader.unpack("<BB", f"dtype/rank of {name!r}")
        if tag not in _TAG_TO_DTYPE:
            raise WeightFormatError(f"tensor {name!r} has unknown dtype tag {tag}")
        if not 1 <= rank <= MAX_RANK:
            raise WeightFormatError(f"tensor {name!r} has invalid rank {rank}")
        dims = reader.unpack(f"<{rank}I", f"dims of {name!r}")
        dtype = _TAG_TO_DTYPE[tag]
        n_bytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        raw = reader.take(n_bytes, f"data of {name!r}")
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()

    if reader.offset != len(data):
        raise WeightFormatError(
            f"{len(data) - reader.offset} trailing bytes after the last tensor"
        )
    return tensors


def write_file(path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(pack(tensors))


def read_file(path) -> dict[str, np.ndarray]:
    return unpack(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Schema adapters for the two networks
# ---------------------------------------------------------------------------

def featnet_to_file(path, weights: FeatNetWeights) -> None:
    write_file(path, weights.to_tensors())


def featnet_from_file(path) -> FeatNetWeights:
    return FeatNetWeights.from_tensors(read_file(path))


def actors_to_file(path, translation: ActorWeights, rotation: ActorWeights) -> None:
    tensors = translation.to_tensors(TRANSLATION_HEAD_PREFIX)
    tensors.update(rotation.to_tensors(ROTATION_HEAD_PREFIX))
    write_file(path, tensors)


def actors_from_file(path) -> tuple[ActorWeights, ActorWeights]:
    tensors = read_file(path)
    return (
        ActorWeights.from_tensors(tensors, TRANSLATION_HEAD_PREFIX),
        ActorWeights.from_tensors(tensors, ROTATION_HEAD_PREFIX),
    )


def bundle_to_file(path, backbone: FeatNetWeights,
                   translation: ActorWeights, rotation: ActorWeights) -> None:
    """One file holding the backbone and both actor heads."""
    tensors = backbone.to_tensors()
    tensors.update(translation.to_tensors(TRANSLATION_HEAD_PREFIX))
    tensors.update(rotation.to_tensors(ROTATION_HEAD_PREFIX))
    write_file(path, tensors)


def bundle_from_file(path) -> tuple[FeatNetWeights, ActorWeights, ActorWeights]:
    tensors = read_file(path)
    backbone_keys = {k: v for k, v in tensors.items() if not k.startswith("actor.")}
    return (
        FeatNetWeights.from_tensors(backbone_keys),
        ActorWeights.from_tensors(tensors, TRANSLATION_HEAD_PREFIX),
        ActorWeights.from_tensors(tensors, ROTATION_HEAD_PREFIX),
    )
