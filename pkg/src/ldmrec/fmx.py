"""FMX binary matrix blocks.

"FMX1" is the bulk feature-matrix format: a 12-byte header (4-byte magic,
u32 rows, u32 cols, little endian) followed by row-major float32 values.
"FMX8" is the same layout with a float64 payload; checkpoints use it so
parameter round-trips stay bit-exact.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import DataError

_HEADER = struct.Struct("<4sII")
MAGIC_F32 = b"FMX1"
MAGIC_F64 = b"FMX8"


def write_block(fh: BinaryIO, matrix: np.ndarray, dtype: str = "f4") -> bytes:
    """Append one matrix block to an open binary stream; returns the payload bytes."""
    arr = np.ascontiguousarray(matrix)
    if arr.ndim != 2:
        raise DataError(f"FMX blocks are 2-D, got ndim={arr.ndim}")
    if dtype == "f4":
        magic, payload = MAGIC_F32, arr.astype("<f4").tobytes()
    elif dtype == "f8":
        magic, payload = MAGIC_F64, arr.astype("<f8").tobytes()
    else:
        raise DataError(f"unsupported FMX dtype {dtype!r}")
    fh.write(_HEADER.pack(magic, arr.shape[0], arr.shape[1]))
    fh.write(payload)
    return payload


def read_block(fh: BinaryIO) -> tuple[np.ndarray, bytes]:
    """Read one matrix block; returns (float64 matrix, raw payload bytes)."""
    header = fh.read(_HEADER.size)
    if len(header) != _HEADER.size:
        raise DataError("truncated FMX header")
    magic, rows, cols = _HEADER.unpack(header)
    if magic == MAGIC_F32:
        itemsize = 4
        dt = "<f4"
    elif magic == MAGIC_F64:
        itemsize = 8
        dt = "<f8"
    else:
        raise DataError(f"bad FMX magic {magic!r}")
    payload = fh.read(rows * cols * itemsize)
    if len(payload) != rows * cols * itemsize:
        raise DataError("truncated FMX payload")
    matrix = np.frombuffer(payload, dtype=dt).reshape(rows, cols).astype(np.float64)
    return matrix, payload


def save_matrix(path, matrix: np.ndarray, dtype: str = "f4") -> None:
    with open(path, "wb") as fh:
        write_block(fh, matrix, dtype=dtype)


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        matrix, _ = read_block(fh)
    return matrix
