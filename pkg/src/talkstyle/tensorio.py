"""The ``VTSR`` binary tensor format.

Layout: magic ``b"VTSR"``, one unsigned byte rank, ``rank`` little-endian
uint32 dimensions, then the row-major float32 little-endian payload.  Values
are rounded to float32 on save and widened back to float64 on load.
"""
from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"VTSR"


class TensorFileError(ValueError):
    """Raised for truncated, oversized, or otherwise malformed tensor files."""


def encode(array) -> bytes:
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim > 255:
        raise TensorFileError(f"rank {arr.ndim} exceeds format limit")
    head = MAGIC + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < 5 or buf[:4] != MAGIC:
        raise TensorFileError(f"{source}: bad magic, not a VTSR tensor")
    rank = buf[4]
    off = 5 + 4 * rank
    if len(buf) < off:
        raise TensorFileError(f"{source}: header truncated")
    shape = struct.unpack(f"<{rank}I", buf[5:off])
    count = int(np.prod(shape)) if rank else 1
    want = off + 4 * count
    if len(buf) != want:
        raise TensorFileError(
            f"{source}: payload is {len(buf) - off} bytes, shape {shape} needs {4 * count}")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=off)
    return data.astype(np.float64).reshape(shape)


def save_tensor(path: str | os.PathLike, array) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(array))


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read(), source=str(path))


def save_csv(path: str | os.PathLike, array, header: list[str] | None = None) -> None:
    arr = np.atleast_2d(np.asarray(array, dtype=np.float64))
    with open(path, "w") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        for row in arr:
            fh.write(",".join(f"{v:.6g}" for v in row) + "\n")
