"""Flat named-tensor container with a shape header.

Binary layout (all integers little-endian):

    magic   4 bytes  b"LSNT"
    version u32      currently 1
    meta    u32 length + UTF-8 JSON blob (model kind, config, vocab, ...)
    count   u32      number of tensors
    entry*  u16 name length + UTF-8 name
            u8 ndim + ndim x u64 dims
            float64 values, row-major, little-endian

The format is self-describing enough for cross-checking shapes on load;
any structural mismatch raises :class:`~longspan.errors.FormatError`.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .autodiff import Tensor
from .errors import FormatError

MAGIC = b"LSNT"
VERSION = 1


def save_tensors(path, tensors: Mapping[str, "np.ndarray | Tensor"], meta: dict | None = None) -> None:
    meta_blob = json.dumps(meta or {}, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as out:
        out.write(MAGIC)
        out.write(struct.pack("<I", VERSION))
        out.write(struct.pack("<I", len(meta_blob)))
        out.write(meta_blob)
        out.write(struct.pack("<I", len(tensors)))
        for name, value in tensors.items():
            arr = value.data if isinstance(value, Tensor) else np.asarray(value)
            arr = np.asarray(arr, dtype=np.float64)  # 0-d stays 0-d
            name_bytes = name.encode("utf-8")
            if len(name_bytes) > 0xFFFF:
                raise FormatError(f"tensor name too long: {name[:40]}...")
            out.write(struct.pack("<H", len(name_bytes)))
            out.write(name_bytes)
            out.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                out.write(struct.pack("<Q", dim))
            out.write(arr.astype("<f8").tobytes())


def _read_exact(handle, size: int, what: str) -> bytes:
    blob = handle.read(size)
    if len(blob) != size:
        raise FormatError(f"truncated container while reading {what}")
    return blob


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"checkpoint not found: {path}")
    with open(path, "rb") as handle:
        if _read_exact(handle, 4, "magic") != MAGIC:
            raise FormatError(f"{path} is not a named-tensor container (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(handle, 4, "version"))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported container version {version}")
        (meta_len,) = struct.unpack("<I", _read_exact(handle, 4, "meta length"))
        try:
            meta = json.loads(_read_exact(handle, meta_len, "metadata").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: corrupt metadata block") from exc
        (count,) = struct.unpack("<I", _read_exact(handle, 4, "tensor count"))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(handle, 2, "name length"))
            name = _read_exact(handle, name_len, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(handle, 1, "ndim"))
            shape = tuple(
                struct.unpack("<Q", _read_exact(handle, 8, "dimension"))[0]
                for _ in range(ndim)
            )
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            blob = _read_exact(handle, 8 * size, f"data of {name}")
            tensors[name] = np.frombuffer(blob, dtype="<f8").astype(np.float64).reshape(shape)
        trailing = handle.read(1)
        if trailing:
            raise FormatError(f"{path}: trailing bytes after last tensor")
    return tensors, meta
