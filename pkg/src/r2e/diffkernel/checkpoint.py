"""Binary checkpoint format.

Layout: magic "R2ECKPT1", u32 manifest length, JSON manifest
[{"name", "dtype", "shape"}, ...], then raw little-endian payloads in
manifest order. Entries are sorted by name so identical inputs serialize
byte-identically.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"R2ECKPT1"

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], dtype=np.float32) -> None:
    dtype = np.dtype(dtype).newbyteorder("<")
    if dtype.str not in _DTYPES:
        raise CheckpointError(f"unsupported checkpoint dtype {dtype}")
    names = sorted(arrays)
    manifest = [{"name": n, "dtype": dtype.str, "shape": list(arrays[n].shape)}
                for n in names]
    blob = json.dumps(manifest, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(arrays[n], dtype=dtype).tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    (mlen,) = struct.unpack_from("<I", raw, 8)
    manifest = json.loads(raw[12:12 + mlen].decode())
    out: dict[str, np.ndarray] = {}
    offset = 12 + mlen
    for entry in manifest:
        dt = _DTYPES.get(entry["dtype"])
        if dt is None:
            raise CheckpointError(f"unsupported dtype {entry['dtype']!r}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dt.itemsize
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated payload for {entry['name']!r}")
        arr = np.frombuffer(raw, dtype=dt, count=count, offset=offset).reshape(shape)
        out[entry["name"]] = arr.copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after payloads")
    return out
