"""The .tns tensor file format.

Layout: magic ``TNS1``, u8 dtype code (0 = float32, 1 = float64), u8
rank, rank little-endian u32 extents, then the raw little-endian
row-major payload.  Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"TNS1"
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def save_tns(path, array) -> None:
    arr = np.ascontiguousarray(getattr(array, "data", array))
    code = _CODE_FOR.get(arr.dtype)
    if code is None:
        raise FormatError(f"unsupported dtype {arr.dtype} for .tns")
    if arr.ndim > 255:
        raise FormatError("rank exceeds 255")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", code, arr.ndim))
        for ext in arr.shape:
            fh.write(struct.pack("<I", ext))
        fh.write(arr.astype(_DTYPE_CODES[code], copy=False).tobytes())


def load_tns(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 6 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a .tns file (bad magic)")
    code, rank = struct.unpack_from("<BB", raw, 4)
    dtype = _DTYPE_CODES.get(code)
    if dtype is None:
        raise FormatError(f"{path}: unknown dtype code {code}")
    header = 6 + 4 * rank
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{rank}I", raw, 6) if rank else ()
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    expected = header + count * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload size {len(raw) - header}, expected {expected - header}"
        )
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=header)
    return data.reshape(shape).astype(dtype.newbyteorder("="), copy=True)
