"""Little-endian float32 matrix blocks shared by the catalog and question files.

Block layout: ``b"ELQE"``, u32 rows, u32 dim, then rows*dim f32 values in
row-major order.
"""
import struct
from typing import BinaryIO

import numpy as np

from .errors import FormatError

MATRIX_MAGIC = b"ELQE"
_HEADER = struct.Struct("<4sII")


def write_matrix(fh: BinaryIO, matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {matrix.shape}")
    rows, dim = matrix.shape
    fh.write(_HEADER.pack(MATRIX_MAGIC, rows, dim))
    fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def read_matrix(fh: BinaryIO, *, where: str = "") -> np.ndarray:
    header = fh.read(_HEADER.size)
    if len(header) != _HEADER.size:
        raise FormatError(f"{where}: truncated matrix header")
    magic, rows, dim = _HEADER.unpack(header)
    if magic != MATRIX_MAGIC:
        raise FormatError(f"{where}: bad magic {magic!r}, expected {MATRIX_MAGIC!r}")
    nbytes = rows * dim * 4
    data = fh.read(nbytes)
    if len(data) != nbytes:
        raise FormatError(f"{where}: expected {nbytes} bytes of matrix data, got {len(data)}")
    return np.frombuffer(data, dtype="<f4").reshape(rows, dim).astype(np.float32)
