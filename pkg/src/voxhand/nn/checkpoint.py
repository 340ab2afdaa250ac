"""Binary checkpoint format.

::

    b"VXCK"  uint32 version  uint32 entry_count
    per entry: uint16 name_len, name (utf-8), uint8 ndim, int32 dims[ndim],
               float32 data (little-endian, C order)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"VXCK"
VERSION = 1


def serialize_state(state: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<HB", len(raw), arr.ndim) + raw)
        parts.append(struct.pack(f"<{arr.ndim}i", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def deserialize_state(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 12
    state = {}
    for _ in range(count):
        name_len, ndim = struct.unpack_from("<HB", data, pos)
        pos += 3
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        shape = struct.unpack_from(f"<{ndim}i", data, pos)
        pos += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(data, "<f4", count=n, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * n
    if pos != len(data):
        raise ValueError(f"trailing bytes in checkpoint ({len(data) - pos})")
    return state


def save_checkpoint(path, state: dict[str, np.ndarray]) -> int:
    data = serialize_state(state)
    Path(path).write_bytes(data)
    return len(data)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return deserialize_state(Path(path).read_bytes())
