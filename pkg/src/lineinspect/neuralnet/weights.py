"""Binary weight-file format.

Layout (all integers little-endian): magic "LSCW", u32 version=1,
u32 tensor count, then per tensor: u32 name length, UTF-8 name, u8 rank,
rank u64 dims, raw little-endian float64 data. Trailing bytes are an error.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"LSCW"
VERSION = 1


def save_weights(tensors: dict[str, np.ndarray], path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


def load_weights(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"{path}: truncated while reading {what}", offset=pos)
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError(f"{path}: bad magic, not a weight file", offset=0)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, "dims")) if rank else ()
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(8 * n, f"tensor {name!r}"), dtype="<f8")
        tensors[name] = data.reshape(dims).astype(np.float64)
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes after last tensor", offset=pos)
    return tensors
