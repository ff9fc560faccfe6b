"""Binary checkpoint format.

Layout (little endian): magic ``b"HDGT"``, u32 format version, u32 entry
count, then per entry: u32 name length, UTF-8 name, u32 rank, u64 per
dimension, and the float32 values in C order.
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"HDGT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(entries: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr, dtype="<f4")  # keeps 0-d shapes, unlike ascontiguousarray
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not an HDGT checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<II", blob, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            size = int(np.prod(shape)) if rank else 1
            if pos + 4 * size > len(blob):
                raise CheckpointError(f"truncated checkpoint: entry {name!r} needs {4 * size} bytes")
            out[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(shape).copy()
            pos += 4 * size
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last entry")
    return out


def save(path, entries: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(entries))


def load(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())
