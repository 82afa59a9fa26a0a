"""Binary tensor container used for datasets, checkpoints, and embedding dumps.

Layout: magic ``CAST``, format version (u16 LE), dtype code (u8), ndim (u8),
dims (u32 LE each), then raw row-major little-endian data.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CAST"
FORMAT_VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("u1"): 3,
}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}


class ContainerFormatError(ValueError):
    """Raised when a container file is corrupt or has an unsupported layout."""


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    """Write ``array`` (f32, f64, or u8) to ``path`` in container format."""
    arr = np.ascontiguousarray(array)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    if dt not in _DTYPE_CODES:
        raise ContainerFormatError(
            f"unsupported dtype {arr.dtype}; expected float32, float64, or uint8"
        )
    if arr.ndim > 255:
        raise ContainerFormatError(f"ndim {arr.ndim} exceeds format limit 255")
    arr = arr.astype(dt, copy=False)
    header = MAGIC + struct.pack("<HBB", FORMAT_VERSION, _DTYPE_CODES[dt], arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(arr.tobytes(order="C"))


def read_tensor(path: str | Path) -> np.ndarray:
    """Read a container file back into a numpy array.

    Raises ContainerFormatError on bad magic, unknown version/dtype, or
    truncated data.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise ContainerFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise ContainerFormatError(f"{path}: bad magic {raw[:4]!r}")
    version, dtype_code, ndim = struct.unpack("<HBB", raw[4:8])
    if version != FORMAT_VERSION:
        raise ContainerFormatError(f"{path}: unsupported format version {version}")
    if dtype_code not in _CODE_DTYPES:
        raise ContainerFormatError(f"{path}: unknown dtype code {dtype_code}")
    dims_end = 8 + 4 * ndim
    if len(raw) < dims_end:
        raise ContainerFormatError(f"{path}: truncated dims")
    shape = struct.unpack(f"<{ndim}I", raw[8:dims_end])
    dtype = _CODE_DTYPES[dtype_code]
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    expected = dims_end + count * dtype.itemsize
    if len(raw) != expected:
        raise ContainerFormatError(
            f"{path}: payload is {len(raw) - dims_end} bytes, expected {expected - dims_end}"
        )
    data = np.frombuffer(raw[dims_end:], dtype=dtype).reshape(shape)
    return data.copy()
