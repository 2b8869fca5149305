"""Named-tensor binary container.

Layout (all integers little-endian)::

    magic     8 bytes  b"CGTENSOR"
    version   uint32   (currently 1)
    count     uint32   number of entries
    entry * count:
        name_len  uint16, name (utf-8)
        dtype_len uint8,  dtype (numpy dtype string, e.g. "<f4")
        ndim      uint8,  dims (uint64 * ndim)
        nbytes    uint64, raw C-order data

Entries keep insertion order and carry no timestamps, so writing the same
tensors always produces the same bytes.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"CGTENSOR"
VERSION = 1


class ContainerError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)  # tobytes() is always C order; ascontiguousarray would promote 0-d
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        bname = name.encode("utf-8")
        dt = arr.dtype.str.encode("ascii")
        parts.append(struct.pack("<H", len(bname)) + bname)
        parts.append(struct.pack("<B", len(dt)) + dt)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        raw = arr.tobytes()
        parts.append(struct.pack("<Q", len(raw)) + raw)
    return b"".join(parts)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:8] != MAGIC:
        raise ContainerError("not a tensor container (bad magic)")
    version, count = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    pos = 16
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2:pos + 2 + n].decode("utf-8")
            pos += 2 + n
            (n,) = struct.unpack_from("<B", buf, pos)
            dtype = np.dtype(buf[pos + 1:pos + 1 + n].decode("ascii"))
            pos += 1 + n
            (ndim,) = struct.unpack_from("<B", buf, pos)
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos + 1)
            pos += 1 + 8 * ndim
            (nbytes,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            if pos + nbytes > len(buf):
                raise ContainerError(f"truncated entry {name!r}")
            arr = np.frombuffer(buf, dtype=dtype, count=nbytes // max(dtype.itemsize, 1),
                                offset=pos).reshape(shape).copy()
            pos += nbytes
            out[name] = arr
    except struct.error as exc:
        raise ContainerError(f"truncated container: {exc}") from None
    return out


def save(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(tensors))


def load(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())
