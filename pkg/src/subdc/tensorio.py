"""Binary tensor container used for every array passed between pipeline stages.

Layout (little-endian throughout)::

    offset  size        field
    0       4           magic b"NCS1"
    4       1           version (1)
    5       1           dtype code
    6       1           ndim
    7       1           reserved, zero
    8       8*ndim      dims, uint64
    ...     payload     row-major, complex interleaved (re, im)

Dtype codes: 1 complex64, 2 float32, 3 float64, 4 complex128.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"NCS1"
VERSION = 1
MAX_NDIM = 8

_CODE_TO_DTYPE = {
    1: np.dtype("<c8"),
    2: np.dtype("<f4"),
    3: np.dtype("<f8"),
    4: np.dtype("<c16"),
}
_KIND_TO_CODE = {"complex64": 1, "float32": 2, "float64": 3, "complex128": 4}


class TensorFormatError(ValueError):
    """Raised when a file does not conform to the container layout."""


def dtype_code(dtype) -> int:
    name = np.dtype(dtype).name
    if name not in _KIND_TO_CODE:
        raise TypeError(f"unsupported dtype {name!r}; expected one of "
                        f"{sorted(_KIND_TO_CODE)}")
    return _KIND_TO_CODE[name]


def encode_tensor(data: np.ndarray) -> bytes:
    """Serialize ``data`` to the container byte layout."""
    data = np.asarray(data)
    code = dtype_code(data.dtype)
    if data.ndim < 1 or data.ndim > MAX_NDIM:
        raise ValueError(f"ndim must be in 1..{MAX_NDIM}, got {data.ndim}")
    if any(d < 1 for d in data.shape):
        raise ValueError(f"all dims must be >= 1, got {data.shape}")
    header = struct.pack("<4sBBBB", MAGIC, VERSION, code, data.ndim, 0)
    header += struct.pack(f"<{data.ndim}Q", *data.shape)
    payload = np.ascontiguousarray(data, dtype=_CODE_TO_DTYPE[code]).tobytes()
    return header + payload


def decode_tensor(buf: bytes) -> tuple[np.ndarray, int]:
    """Parse container bytes. Returns ``(array, dtype_code)``."""
    if len(buf) < 8:
        raise TensorFormatError("truncated header")
    magic, version, code, ndim, reserved = struct.unpack_from("<4sBBBB", buf, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    if code not in _CODE_TO_DTYPE:
        raise TensorFormatError(f"unknown dtype code {code}")
    if not 1 <= ndim <= MAX_NDIM:
        raise TensorFormatError(f"invalid ndim {ndim}")
    if reserved != 0:
        raise TensorFormatError("reserved byte must be zero")
    offset = 8 + 8 * ndim
    if len(buf) < offset:
        raise TensorFormatError("truncated dims")
    dims = struct.unpack_from(f"<{ndim}Q", buf, 8)
    dtype = _CODE_TO_DTYPE[code]
    count = 1
    for d in dims:
        if d < 1:
            raise TensorFormatError(f"invalid dim {d}")
        count *= d
    nbytes = count * dtype.itemsize
    # guards against dims whose product overflows any sane payload size
    if nbytes > len(buf) - offset:
        raise TensorFormatError(
            f"truncated payload: need {nbytes} bytes, have {len(buf) - offset}")
    if nbytes < len(buf) - offset:
        raise TensorFormatError("trailing bytes after payload")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    return arr.reshape(dims).copy(), code


def write_tensor(path: str | os.PathLike, data: np.ndarray) -> None:
    """Write ``data`` to ``path`` in container format."""
    blob = encode_tensor(data)
    with open(path, "wb") as fh:
        fh.write(blob)


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    """Read an array written by :func:`write_tensor`.

    The returned array keeps the stored dtype; use :func:`read_tensor_tagged`
    to also get the dtype code.
    """
    return read_tensor_tagged(path)[0]


def read_tensor_tagged(path: str | os.PathLike) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode_tensor(buf)
