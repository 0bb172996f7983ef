"""Binary tensor files.

Layout (all integers little-endian)::

    b"BTEN" | version u8 | dtype u8 (0=f32, 1=f64) | rank u8 | rank x u64 dims | payload

The payload is the row-major array in the declared dtype.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"BTEN"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class TensorFormatError(ValueError):
    """A tensor file violates the BTEN layout."""


def encode_tensor(array, dtype=None) -> bytes:
    arr = np.asarray(getattr(array, "data", array))
    dt = np.dtype(dtype) if dtype is not None else arr.dtype
    if dt not in DTYPE_CODES:
        dt = np.dtype("float64")
    if not 1 <= arr.ndim <= 255:
        raise TensorFormatError(f"rank must be in [1, 255], got {arr.ndim}")
    if 0 in arr.shape:
        raise TensorFormatError(f"dims must be positive, got {arr.shape}")
    header = MAGIC + struct.pack("<BBB", VERSION, DTYPE_CODES[dt], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=DTYPES[DTYPE_CODES[dt]]).tobytes()


def decode_tensor(raw: bytes) -> np.ndarray:
    if len(raw) < 7:
        raise TensorFormatError("header truncated")
    if raw[:4] != MAGIC:
        raise TensorFormatError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version, code, rank = struct.unpack_from("<BBB", raw, 4)
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    if code not in DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}")
    if rank == 0:
        raise TensorFormatError("rank must be at least 1")
    offset = 7 + 8 * rank
    if len(raw) < offset:
        raise TensorFormatError("header truncated: dims missing")
    dims = struct.unpack_from(f"<{rank}Q", raw, 7)
    if any(d == 0 for d in dims):
        raise TensorFormatError(f"dims must be positive, got {dims}")
    dtype = DTYPES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = raw[offset:]
    if len(payload) < expected:
        raise TensorFormatError("payload shorter than header dims imply")
    if len(payload) > expected:
        raise TensorFormatError("payload longer than header dims imply")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def save_tensor(path, array, dtype=None) -> None:
    data = encode_tensor(array, dtype)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())
