"""Binary weights file.

Layout (little-endian)::

    b"WVWT" | version u32 | tensor count u32
    per tensor: name length u16 | UTF-8 name | rank u8 | rank * u32 extents | float32 payload

Tensors are written in the order given and read back in file order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

__all__ = ["save_weights", "load_weights", "stored_float", "MAGIC", "VERSION"]

MAGIC = b"WVWT"
VERSION = 1
_HEADER = struct.Struct("<4sII")


def _encode(weights: dict[str, np.ndarray]) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, len(weights))]
    for name, value in weights.items():
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:40]}...")
        arr = np.asarray(value)
        if arr.ndim > 0xFF:
            raise ValueError(f"tensor {name!r} has rank {arr.ndim} > 255")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def stored_float(value) -> float:
    """Shortest decimal that rounds to the stored float32, so 2e-3 reads back as 2e-3."""
    return float(str(np.float32(value)))


def save_weights(weights: dict[str, np.ndarray], path) -> None:
    """Write ``weights``; values are stored as float32."""
    Path(path).write_bytes(_encode(weights))


def load_weights(path) -> dict[str, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(path, len(raw), f"file shorter than the {_HEADER.size}-byte header")
    magic, version, count = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(path, 0, f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(path, 4, f"unsupported version {version}, expected {VERSION}")

    pos = _HEADER.size
    out: dict[str, np.ndarray] = {}

    def need(n: int, what: str) -> None:
        if pos + n > len(raw):
            raise FormatError(path, pos, f"truncated {what}: need {n} bytes, {len(raw) - pos} left")

    for i in range(count):
        need(2, f"name length of tensor {i}")
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        need(name_len, f"name of tensor {i}")
        try:
            name = raw[pos : pos + name_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(path, pos, f"tensor {i} name is not UTF-8") from exc
        if name in out:
            raise FormatError(path, pos, f"duplicate tensor name {name!r}")
        pos += name_len
        need(1, f"rank of {name!r}")
        rank = raw[pos]
        pos += 1
        need(4 * rank, f"extents of {name!r}")
        shape = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        size = int(np.prod(shape, dtype=np.int64))
        need(4 * size, f"payload of {name!r}")
        out[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * size
    if pos != len(raw):
        raise FormatError(path, pos, f"{len(raw) - pos} trailing bytes after {count} tensors")
    return out
