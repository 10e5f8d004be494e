"""Length-prefixed binary container of named arrays.

Layout (all integers little-endian)::

    magic      8 bytes   b"DQRSBIN\\0"
    version    uint32    currently 1
    count      uint32    number of entries
    entry * count:
        name_len  uint16, name  utf-8 bytes
        dtype     uint8   0=float64 1=int64 2=uint8
        ndim      uint8
        dims      uint64 * ndim
        payload   product(dims) * itemsize bytes, C order

Entry order is preserved, so writing the same mapping twice yields the same
bytes. Used for segment archives and model checkpoints.
"""

from __future__ import annotations

import io
import json
import struct
from typing import Mapping

import numpy as np

MAGIC = b"DQRSBIN\x00"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8"), 2: np.dtype("u1")}
_CODES = {np.dtype("float64"): 0, np.dtype("int64"): 1, np.dtype("uint8"): 2}


class ContainerError(ValueError):
    pass


def _code(arr: np.ndarray) -> int:
    try:
        return _CODES[arr.dtype.newbyteorder("=")]
    except KeyError:
        raise ContainerError(f"unsupported dtype {arr.dtype}") from None


def dumps(arrays: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _code(arr)
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", code, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return buf.getvalue()


def loads(data: bytes) -> dict[str, np.ndarray]:
    view = memoryview(data)
    if bytes(view[:8]) != MAGIC:
        raise ContainerError("not a DQRS container (bad magic)")
    version, count = struct.unpack_from("<II", view, 8)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    pos = 16
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos : pos + nlen]).decode("utf-8")
            pos += nlen
            code, ndim = struct.unpack_from("<BB", view, pos)
            pos += 2
            dims = struct.unpack_from(f"<{ndim}Q", view, pos)
            pos += 8 * ndim
            dtype = _DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(view):
                raise ContainerError(f"entry {name!r} truncated at byte {pos}")
            out[name] = np.frombuffer(view[pos : pos + nbytes], dtype=dtype).reshape(dims).copy()
            pos += nbytes
    except (struct.error, KeyError) as exc:
        raise ContainerError(f"corrupt container near byte {pos}: {exc}") from None
    return out


def pack_json(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8)


def unpack_json(arr: np.ndarray):
    return json.loads(arr.tobytes().decode("utf-8"))
