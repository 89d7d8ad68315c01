"""Binary tensor and matrix file formats.

Tensor files: 4-byte magic ``DT3\\0``, three little-endian uint32 dimensions
``(I, J, K)``, then ``I*J*K`` little-endian float64 values in column-major
order (first index fastest).

Matrix files: 4-byte magic ``DM2\\0``, two little-endian uint32 dimensions
``(rows, cols)``, then column-major float64 values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["read_tensor", "write_tensor", "read_matrix", "write_matrix"]

TENSOR_MAGIC = b"DT3\0"
MATRIX_MAGIC = b"DM2\0"
_UINT32_MAX = 2**32 - 1


def _read_payload(path, magic: bytes, ndim: int) -> tuple[tuple[int, ...], np.ndarray]:
    raw = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ValueError(f"{path}: file too short for a {magic[:3].decode()} header")
    if raw[:4] != magic:
        raise ValueError(
            f"{path}: bad magic {raw[:4]!r}, expected {magic!r}"
        )
    dims = struct.unpack(f"<{ndim}I", raw[4:header])
    if any(d == 0 for d in dims):
        raise ValueError(f"{path}: zero dimension in header {dims}")
    count = 1
    for d in dims:
        count *= d
    expected = header + 8 * count
    if len(raw) < expected:
        raise ValueError(
            f"{path}: truncated payload, need {expected} bytes for dims {dims} "
            f"but file has {len(raw)}"
        )
    if len(raw) > expected:
        raise ValueError(f"{path}: {len(raw) - expected} trailing bytes after payload")
    data = np.frombuffer(raw[header:], dtype="<f8")
    return dims, data


def read_tensor(path) -> np.ndarray:
    """Read a third-order tensor file."""
    dims, data = _read_payload(path, TENSOR_MAGIC, 3)
    return data.reshape(dims, order="F").astype(np.float64)


def write_tensor(path, t: np.ndarray) -> None:
    """Write a third-order tensor file."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3:
        raise ValueError(f"expected a third-order tensor, got ndim={t.ndim}")
    if any(d > _UINT32_MAX for d in t.shape):
        raise ValueError(f"dimensions {t.shape} exceed the uint32 header range")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<3I", *t.shape))
        fh.write(np.asfortranarray(t).astype("<f8").tobytes(order="F"))


def read_matrix(path) -> np.ndarray:
    """Read a matrix file."""
    dims, data = _read_payload(path, MATRIX_MAGIC, 2)
    return data.reshape(dims, order="F").astype(np.float64)


def write_matrix(path, m: np.ndarray) -> None:
    """Write a matrix file."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim={m.ndim}")
    if any(d > _UINT32_MAX for d in m.shape):
        raise ValueError(f"dimensions {m.shape} exceed the uint32 header range")
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<2I", *m.shape))
        fh.write(np.asfortranarray(m).astype("<f8").tobytes(order="F"))
