"""Flat binary parameter checkpoints.

Layout (all integers little-endian, see docs/checkpoint_format.md)::

    magic   8 bytes   b"GAMRCKPT"
    version u32       1
    count   u32       number of entries
    entry * count:
        name_len u32, name (utf-8, name_len bytes)
        ndim     u32, dims (u64 * ndim)
        values   float64 little-endian, prod(dims) of them, row-major
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import ContractError
from .tensor import Tensor

MAGIC = b"GAMRCKPT"
VERSION = 1


def save_checkpoint(path, params: Mapping[str, Tensor | np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name in sorted(params):
        arr = params[name]
        arr = arr.data if isinstance(arr, Tensor) else np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ContractError(f"{path}: not a parameter checkpoint")
    version, count = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    out: dict[str, np.ndarray] = {}
    try:
        off = _read_entries(buf, off, count, out)
    except (struct.error, ValueError, UnicodeDecodeError):
        raise ContractError(f"{path}: truncated or corrupt checkpoint") from None
    if off != len(buf):
        raise ContractError(f"{path}: {len(buf) - off} trailing bytes after the last entry")
    return out


def _read_entries(buf: bytes, off: int, count: int, out: dict) -> int:
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off:off + n].decode("utf-8")
        off += n
        (ndim,) = struct.unpack_from("<I", buf, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", buf, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
        off += 8 * size
    return off


def restore(params: Mapping[str, Tensor], values: Mapping[str, np.ndarray]) -> None:
    """Copy checkpoint values into live parameters (names and shapes must match)."""
    missing = set(params) - set(values)
    if missing:
        raise ContractError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
    for name, p in params.items():
        if values[name].shape != p.data.shape:
            raise ContractError(f"{name}: checkpoint shape {values[name].shape} != {p.data.shape}")
        p.data[...] = values[name]
