"""Binary record container shared by checkpoints and dataset samples.

Layout (all integers little-endian)::

    header   magic b"OCFR" | version u16 | reserved u16 | record count u32
    record   name length u16 | name utf-8
             dtype tag u8 | codec u8 | ndim u8 | shape u32 * ndim
             payload length u64 | payload

dtype tags: 1 float32, 2 float64, 3 int64, 4 uint8, 5 int32.
codec: 0 raw little-endian C-order scalars, 1 zlib-compressed raw payload.
Records are written in insertion order; names must be unique.
"""

from __future__ import annotations

import io
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"OCFR"
VERSION = 1

_TAGS = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("<i8"): 3,
    np.dtype("u1"): 4,
    np.dtype("<i4"): 5,
}
_DTYPES = {v: k for k, v in _TAGS.items()}


class RecordFormatError(ValueError):
    pass


def dumps(records: dict[str, np.ndarray], compress: bool = False) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HHI", VERSION, 0, len(records)))
    for name, arr in records.items():
        arr = np.asarray(arr)
        if arr.dtype == np.bool_:
            arr = arr.astype(np.uint8)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        if np.dtype(dt) not in _TAGS:
            raise RecordFormatError(f"unsupported dtype {arr.dtype} for record {name!r}")
        payload = np.ascontiguousarray(arr, dtype=dt).tobytes()
        codec = 0
        if compress:
            payload, codec = zlib.compress(payload, 6), 1
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BBB", _TAGS[np.dtype(dt)], codec, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(struct.pack("<Q", len(payload)))
        buf.write(payload)
    return buf.getvalue()


def loads(blob: bytes) -> dict[str, np.ndarray]:
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise RecordFormatError("bad magic")
    version, _, count = struct.unpack_from("<HHI", view, 4)
    if version != VERSION:
        raise RecordFormatError(f"unsupported container version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            pos = _read_one(view, pos, out)
    except (struct.error, zlib.error, ValueError, KeyError, UnicodeDecodeError) as e:
        raise RecordFormatError(f"corrupt container: {e}") from None
    if pos != len(view):
        raise RecordFormatError(f"{len(view) - pos} trailing bytes after last record")
    return out


def _read_one(view: memoryview, pos: int, out: dict) -> int:
    (nlen,) = struct.unpack_from("<H", view, pos)
    pos += 2
    name = bytes(view[pos:pos + nlen]).decode()
    pos += nlen
    tag, codec, ndim = struct.unpack_from("<BBB", view, pos)
    pos += 3
    shape = struct.unpack_from(f"<{ndim}I", view, pos)
    pos += 4 * ndim
    (plen,) = struct.unpack_from("<Q", view, pos)
    pos += 8
    if pos + plen > len(view):
        raise RecordFormatError(f"record {name!r} truncated")
    payload = bytes(view[pos:pos + plen])
    pos += plen
    if codec == 1:
        payload = zlib.decompress(payload)
    elif codec != 0:
        raise RecordFormatError(f"unknown codec {codec} in record {name!r}")
    if name in out:
        raise RecordFormatError(f"duplicate record {name!r}")
    out[name] = np.frombuffer(payload, dtype=_DTYPES[tag]).reshape(shape).copy()
    return pos


def save(path, records: dict[str, np.ndarray], compress: bool = False):
    Path(path).write_bytes(dumps(records, compress=compress))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
