"""VTF: the tiny binary tensor format used for checkpoints, datasets and videos.

Layout: magic ``VTF1``, u32 LE rank, rank x u32 LE extents, then the f32 LE
payload in row-major order.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"VTF1"


class VTFError(ValueError):
    pass


def to_bytes(array) -> bytes:
    arr = np.asarray(getattr(array, "data", array))
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def from_bytes(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise VTFError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    (rank,) = struct.unpack_from("<I", buf, 4)
    shape = struct.unpack_from(f"<{rank}I", buf, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(shape)) if rank else 1
    if len(buf) - offset != 4 * count:
        raise VTFError(f"payload is {len(buf) - offset} bytes, expected {4 * count} for shape {shape}")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=offset).astype(np.float32).reshape(shape)


def save(path: str | os.PathLike, array) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(array))


def load(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
