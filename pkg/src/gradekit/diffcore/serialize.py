"""Versioned binary container for named tensors.

Layout (all little-endian)::

    b"GKTENSOR" | u32 version | u32 count
    repeated count times:
        u16 name_len | name (utf-8) | u8 dtype_tag | u8 ndim | ndim * u32 | payload

Payloads are written verbatim so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import hashlib
import io
import struct

import numpy as np

from ..errors import DataError

MAGIC = b"GKTENSOR"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i4"), 4: np.dtype("<i8")}
_TAGS = {v: k for k, v in _DTYPES.items()}


def dumps_tensors(tensors):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _TAGS:
            raise DataError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", _TAGS[dt], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return buf.getvalue()


def loads_tensors(blob):
    view = memoryview(blob)
    if bytes(view[:8]) != MAGIC:
        raise DataError("not a gradekit tensor file (bad magic)")
    version, count = struct.unpack_from("<II", view, 8)
    if version != VERSION:
        raise DataError(f"unsupported tensor file version {version}")
    pos = 16
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos:pos + nlen]).decode("utf-8")
            pos += nlen
            tag, ndim = struct.unpack_from("<BB", view, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", view, pos)
            pos += 4 * ndim
            dt = _DTYPES[tag]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(view):
                raise DataError(f"truncated payload for tensor {name!r}")
            out[name] = np.frombuffer(view[pos:pos + nbytes], dtype=dt).reshape(shape).copy()
            pos += nbytes
    except (struct.error, KeyError) as exc:
        raise DataError(f"corrupt tensor file: {exc}") from exc
    return out


def save_tensors(path, tensors):
    with open(path, "wb") as fh:
        fh.write(dumps_tensors(tensors))


def load_tensors(path):
    with open(path, "rb") as fh:
        return loads_tensors(fh.read())


def digest(tensors):
    """sha256 over the serialized form; equal digests mean bit-equal tensors."""
    return hashlib.sha256(dumps_tensors(tensors)).hexdigest()
