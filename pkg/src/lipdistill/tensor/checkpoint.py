"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      b"LDCKPT\\0\\0"   8 bytes
    version    u32
    meta_len   u32, followed by meta_len bytes of UTF-8 JSON
    count      u32
    count x record:
        name_len u32, name (UTF-8)
        dtype    u8   (0 = f32, 1 = f64, 2 = i64)
        ndim     u32
        dims     ndim x u64
        payload  product(dims) x itemsize bytes, little-endian IEEE-754 / two's complement
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import ConfigError

MAGIC = b"LDCKPT\0\0"
FORMAT_VERSION = 1

_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2}
_DTYPES = {v: k for k, v in _TAGS.items()}


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    out = bytearray(MAGIC)
    out += struct.pack("<I", FORMAT_VERSION)
    meta_bytes = json.dumps(dict(meta or {}), sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(meta_bytes)) + meta_bytes
    out += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _TAGS:
            raise TypeError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded)) + encoded
        out += struct.pack("<BI", _TAGS[dt], arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += np.ascontiguousarray(arr, dtype=dt).tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(tensors, meta)`` from a file written by :func:`save_checkpoint`."""
    buf = memoryview(Path(path).read_bytes())
    if bytes(buf[:8]) != MAGIC:
        raise ConfigError(f"{path}: not a lipdistill checkpoint")
    pos = 8
    (version,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if version != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    meta = json.loads(bytes(buf[pos:pos + meta_len]).decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = bytes(buf[pos:pos + name_len]).decode("utf-8")
        pos += name_len
        tag, ndim = struct.unpack_from("<BI", buf, pos)
        pos += 5
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        dt = _DTYPES[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(buf[pos:pos + nbytes], dtype=dt).reshape(shape).copy()
        pos += nbytes
        tensors[name] = arr.astype(arr.dtype.newbyteorder("="))
    return tensors, meta
