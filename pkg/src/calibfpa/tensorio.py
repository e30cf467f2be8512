"""Binary tensor container and 16-bit PGM dumps.

Container layout (little-endian)::

    offset  size      field
    0       4         magic b"CFPA"
    4       2         version (u16, currently 1)
    6       1         dtype code (1 = float64, 2 = uint8)
    7       1         ndim (u8)
    8       4*ndim    dims (u32 each, row-major order)
    ...     prod*sz   payload, C-contiguous
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"CFPA"
VERSION = 1
_HEADER = struct.Struct("<4sHBB")
_CODES = {1: np.dtype("<f8"), 2: np.dtype("u1")}
_DTYPE_TO_CODE = {np.dtype("float64"): 1, np.dtype("uint8"): 2}


class FormatError(ValueError):
    pass


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    code = _DTYPE_TO_CODE.get(arr.dtype)
    if code is None:
        if np.issubdtype(arr.dtype, np.floating) or np.issubdtype(arr.dtype, np.integer):
            arr, code = arr.astype(np.float64), 1
        else:
            raise FormatError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("too many dimensions")
    head = _HEADER.pack(MAGIC, VERSION, code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + dims + np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, code, ndim = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    if code not in _CODES:
        raise FormatError(f"unknown dtype code {code}")
    off = _HEADER.size
    dims = struct.unpack_from(f"<{ndim}I", buf, off)
    off += 4 * ndim
    dtype = _CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buf) - off != expected:
        raise FormatError(f"payload is {len(buf) - off} bytes, header implies {expected}")
    arr = np.frombuffer(buf, dtype=dtype, offset=off).reshape(dims)
    return arr.astype(dtype.newbyteorder("="))


def write_tensor(path, arr: np.ndarray):
    with open(path, "wb") as f:
        f.write(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_tensor(f.read())


def write_pgm16(path, img: np.ndarray, lo: float = 0.0, hi: float = 1.0):
    """Write ``img`` clipped to ``[lo, hi]`` as a binary 16-bit PGM."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM needs a 2-D image")
    q = np.round((np.clip(img, lo, hi) - lo) / (hi - lo) * 65535).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii"))
        f.write(q.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (8 or 16 bit) into ``[0, 1]`` floats."""
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise FormatError(f"{os.fspath(path)} is not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return arr.astype(np.float64) / maxval
