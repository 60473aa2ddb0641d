"""Reader/writer for the .rgkw binary weight container.

This is an independent implementation of the format the registration runtime
defines; the two packages share only these bytes. Layout, all little-endian,
no padding:

    magic   4 bytes  b"RGKW"
    version u16      currently 1
    count   u32      number of tensors
    then per tensor, in file order:
        name_len u16      byte length of the UTF-8 name (1..65535)
        name     bytes    UTF-8, unique within the file
        dtype    u8       0 = f32, 1 = i8, 2 = u8
        rank     u8       number of dimensions (1..8)
        dims     u32 x rank
        data     prod(dims) * itemsize bytes, C contiguous

Tensors keep their insertion order, so writing the same mapping twice
produces byte-identical files.
"""

from __future__ import annotations

import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np

MAGIC = b"RGKW"
VERSION = 1
MAX_RANK = 8

_TAG_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("i1"), 2: np.dtype("u1")}
_KIND_TO_TAG = {("f", 4): 0, ("i", 1): 1, ("u", 1): 2}


class ContainerError(ValueError):
    """Bytes do not form a valid weight container, or tensors cannot be stored."""


def pack(tensors: Mapping[str, np.ndarray]) -> bytes:
    """Serialize name -> array to container bytes, preserving order."""
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    seen: set[str] = set()
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        if not 1 <= len(encoded) <= 0xFFFF:
            raise ContainerError(f"tensor name {name!r} must encode to 1..65535 bytes")
        if name in seen:
            raise ContainerError(f"duplicate tensor name {name!r}")
        seen.add(name)
        array = np.asarray(array)
        if not 1 <= array.ndim <= MAX_RANK:
            raise ContainerError(f"tensor {name!r} has rank {array.ndim}, expected 1..{MAX_RANK}")
        tag = _KIND_TO_TAG.get((array.dtype.kind, array.dtype.itemsize))
        if tag is None:
            raise ContainerError(
                f"tensor {name!r} has dtype {array.dtype}, expected float32, int8, or uint8"
            )
        data = np.ascontiguousarray(array.astype(_TAG_TO_DTYPE[tag], copy=False))
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", tag, array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(data.tobytes())
    return b"".join(chunks)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise ContainerError(
                f"truncated container: need {n} bytes for {what} at offset {self.offset}, "
                f"have {len(self.data) - self.offset}"
            )
        out = self.data[self.offset:self.offset + n]
        self.offset += n
        return out

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def unpack(data: bytes) -> dict[str, np.ndarray]:
    """Parse container bytes back into an ordered name -> array mapping."""
    cursor = _Cursor(data)
    if cursor.take(4, "magic") != MAGIC:
        raise ContainerError("bad magic: not a RGKW weight container")
    version, count = cursor.unpack("<HI", "header")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")

    tensors: dict[str, np.ndarray] = {}
    for index in range(count):
        (name_len,) = cursor.unpack("<H", f"name length of tensor {index}")
        if name_len == 0:
            raise ContainerError(f"tensor {index} has an empty name")
        try:
            name = cursor.take(name_len, f"name of tensor {index}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ContainerError(f"tensor {index} name is not valid UTF-8") from exc
        if name in tensors:
            raise ContainerError(f"duplicate tensor name {name!r}")
        tag, rank = cursor.unpack("<BB", f"dtype/rank of {name!r}")
        if tag not in _TAG_TO_DTYPE:
            raise ContainerError(f"tensor {name!r} has unknown dtype tag {tag}")
        if not 1 <= rank <= MAX_RANK:
            raise ContainerError(f"tensor {name!r} has invalid rank {rank}")
        dims = cursor.unpack(f"<{rank}I", f"dims of {name!r}")
        dtype = _TAG_TO_DTYPE[tag]
        n_bytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        raw = cursor.take(n_bytes, f"data of {name!r}")
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()

    if cursor.offset != len(data):
        raise ContainerError(f"{len(data) - cursor.offset} trailing bytes after the last tensor")
    return tensors


def write_file(path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(pack(tensors))


def read_file(path) -> dict[str, np.ndarray]:
    return unpack(Path(path).read_bytes())
