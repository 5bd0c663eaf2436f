"""Bit-exact binary checkpoint files for named float32 arrays.

Layout (all integers little-endian):

    magic   8 bytes  b"EDMCKPT1"
    version u16      currently 1
    count   u32      number of arrays
    entry*  u16 name length, ascii name, u8 ndim, u32 per dim, u64 offset
    size    u64      payload length in bytes
    payload          raw little-endian float32 data, entries back to back
    crc     u32      zlib.crc32 of the payload

Entries are written in sorted name order so identical array dicts always
produce identical files. The checksum is verified on load and any mismatch
is a hard error.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"EDMCKPT1"
VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    """Write named arrays as float32. Non-ascii or empty names are rejected."""
    if not arrays:
        raise CheckpointError("refusing to write an empty checkpoint")
    header = [MAGIC, struct.pack("<HI", VERSION, len(arrays))]
    payload = bytearray()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        try:
            name_b = name.encode("ascii")
        except UnicodeEncodeError as exc:
            raise CheckpointError(f"array name {name!r} is not ascii") from exc
        if not name_b:
            raise CheckpointError("array names must be non-empty")
        header.append(struct.pack("<H", len(name_b)) + name_b)
        header.append(struct.pack("<B", arr.ndim))
        header.append(struct.pack(f"<{max(arr.ndim, 0)}I", *arr.shape))
        header.append(struct.pack("<Q", len(payload)))
        payload.extend(arr.tobytes())
    blob = b"".join(header) + struct.pack("<Q", len(payload)) + bytes(payload)
    blob += struct.pack("<I", zlib.crc32(bytes(payload)) & 0xFFFFFFFF)
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into a name -> float32 array dict.

    Raises CheckpointError on a bad magic, unsupported version, truncated
    structure, or checksum mismatch.
    """
    data = Path(path).read_bytes()
    view = memoryview(data)
    if len(data) < len(MAGIC) + 6 or view[:8] != MAGIC:
        raise CheckpointError(f"{path}: missing checkpoint magic")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint header")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    version, count = take("<HI")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    entries = []
    for _ in range(count):
        (name_len,) = take("<H")
        if pos + name_len > len(data):
            raise CheckpointError(f"{path}: truncated array name")
        name = bytes(view[pos:pos + name_len]).decode("ascii")
        pos += name_len
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I") if ndim else ()
        (offset,) = take("<Q")
        entries.append((name, shape, offset))
    (payload_len,) = take("<Q")
    if pos + payload_len + 4 > len(data):
        raise CheckpointError(f"{path}: truncated payload")
    payload = bytes(view[pos:pos + payload_len])
    (crc,) = struct.unpack_from("<I", data, pos + payload_len)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: payload checksum mismatch")

    arrays = {}
    for name, shape, offset in entries:
        n_items = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + 4 * n_items
        if end > payload_len:
            raise CheckpointError(f"{path}: array {name!r} overruns the payload")
        arrays[name] = np.frombuffer(payload, dtype="<f4", count=n_items,
                                     offset=offset).reshape(shape).copy()
    return arrays
