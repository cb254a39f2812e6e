"""
Checkpoint Archive
Binary tensor archive shared by every stage:

    magic "HFLW" | version u16 | tensor count u32
    per tensor: name length u16 | UTF-8 name | rank u8 | extents u32 each | float64 payload

All integers and floats are little-endian.
"""

import os
import struct
from collections import OrderedDict
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from utils.errors import ContractViolation, MissingArtifactError

MAGIC = b"HFLW"
FORMAT_VERSION = 1
META_PREFIX = "meta."

ArrayLike = Union[np.ndarray, torch.Tensor, float, int]


def _as_array(value: ArrayLike) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    return np.asarray(value, dtype="<f8")


def encode_archive(tensors: Mapping[str, ArrayLike]) -> bytes:
    """Serialize named tensors in insertion order"""
    chunks = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(tensors))]
    for name, value in tensors.items():
        array = _as_array(value)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF or array.ndim > 0xFF:
            raise ContractViolation(f"Tensor '{name}' cannot be archived (name or rank too large)")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array).tobytes())
    return b"".join(chunks)


def decode_archive(payload: bytes) -> "OrderedDict[str, np.ndarray]":
    """Parse an archive produced by encode_archive"""
    if payload[:4] != MAGIC:
        raise ContractViolation("Not an HFLW archive (bad magic bytes)")
    version, count = struct.unpack_from("<HI", payload, 4)
    if version != FORMAT_VERSION:
        raise ContractViolation(f"Unsupported HFLW format version {version}")
    offset = 10
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        (name_length,) = struct.unpack_from("<H", payload, offset)
        offset += 2
        name = payload[offset:offset + name_length].decode("utf-8")
        offset += name_length
        (rank,) = struct.unpack_from("<B", payload, offset)
        offset += 1
        extents = struct.unpack_from(f"<{rank}I", payload, offset)
        offset += 4 * rank
        size = int(np.prod(extents)) if rank else 1
        array = np.frombuffer(payload, dtype="<f8", count=size, offset=offset).reshape(extents)
        offset += 8 * size
        tensors[name] = array.astype(np.float64)
    if offset != len(payload):
        raise ContractViolation(f"HFLW archive has {len(payload) - offset} trailing bytes")
    return tensors


def write_archive(path: str, tensors: Mapping[str, ArrayLike]) -> str:
    """Write an archive atomically (temporary file, then rename)"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    temporary = f"{path}.tmp"
    with open(temporary, "wb") as f:
        f.write(encode_archive(tensors))
    os.replace(temporary, path)
    return path


def read_archive(path: str) -> "OrderedDict[str, np.ndarray]":
    if not os.path.exists(path):
        raise MissingArtifactError(f"Checkpoint not found: {path}")
    with open(path, "rb") as f:
        return decode_archive(f.read())


def module_tensors(module: nn.Module, meta: Optional[Mapping[str, float]] = None) -> "OrderedDict[str, ArrayLike]":
    """State dict entries followed by `meta.*` scalars"""
    tensors: "OrderedDict[str, ArrayLike]" = OrderedDict()
    for name, value in module.state_dict().items():
        tensors[name] = value
    for key, value in (meta or {}).items():
        tensors[f"{META_PREFIX}{key}"] = float(value)
    return tensors


def split_meta(tensors: Mapping[str, np.ndarray]) -> Tuple[Dict[str, np.ndarray], Dict[str, float]]:
    """Separate state entries from `meta.*` scalars"""
    state = {k: v for k, v in tensors.items() if not k.startswith(META_PREFIX)}
    meta = {k[len(META_PREFIX):]: float(v) for k, v in tensors.items() if k.startswith(META_PREFIX)}
    return state, meta


def load_module_state(module: nn.Module, state: Mapping[str, np.ndarray]) -> nn.Module:
    """Load archived float64 values, casting back to each entry's dtype"""
    current = module.state_dict()
    missing = sorted(set(current) - set(state))
    unexpected = sorted(set(state) - set(current))
    if missing or unexpected:
        raise ContractViolation(f"Checkpoint does not match the module: missing {missing}, unexpected {unexpected}")
    restored = {name: torch.from_numpy(np.array(state[name])).to(current[name].dtype) for name in current}
    module.load_state_dict(restored)
    return module
