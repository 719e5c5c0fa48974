"""
Binary parameter container.

    magic    b"MFMR"
    version  uint32 LE
    config   uint32 LE length + UTF-8 JSON of ModelConfig
    count    uint32 LE
    tensors  count x (uint16 name length, name, uint8 ndim, ndim x uint32 dims,
             little-endian float64 data)

Tensors are written in declaration order; a load reproduces them bit for bit.
"""

import json
import os
import struct
from typing import Tuple

import numpy as np

from ..errors import ArtifactIOError, FormatError, VersionError
from .config import ModelConfig
from .params import ParameterSet, parameter_shapes

MAGIC = b"MFMR"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


def dumps(params: ParameterSet, cfg: ModelConfig) -> bytes:
    header = json.dumps(cfg.model_dump(), sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(header)), header,
              struct.pack("<I", len(params))]
    for name, tensor in params.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", tensor.ndim))
        chunks.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        chunks.append(np.ascontiguousarray(tensor, dtype=_DTYPE).tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> Tuple[ParameterSet, ModelConfig]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("not a parameter checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise VersionError(f"checkpoint version {version}, expected {FORMAT_VERSION}")
    (header_len,) = r.unpack("<I")
    try:
        cfg = ModelConfig(**json.loads(r.take(header_len).decode("utf-8")))
    except (ValueError, TypeError) as e:
        raise FormatError(f"bad config header: {e}") from e
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        raw = r.take(size * _DTYPE.itemsize)
        tensors[name] = np.frombuffer(raw, dtype=_DTYPE).reshape(shape).astype(np.float64)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last tensor")
    expected = parameter_shapes(cfg)
    if list(tensors) != list(expected):
        raise FormatError("tensor names do not match the stored config")
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise FormatError(f"{name}: shape {tensors[name].shape}, expected {shape}")
    return ParameterSet(tensors), cfg


def save_checkpoint(path: str, params: ParameterSet, cfg: ModelConfig) -> None:
    data = dumps(params, cfg)
    tmp = f"{path}.tmp"
    try:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as e:
        raise ArtifactIOError(path, str(e)) from e


def load_checkpoint(path: str) -> Tuple[ParameterSet, ModelConfig]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise ArtifactIOError(path, str(e)) from e
    return loads(data)
