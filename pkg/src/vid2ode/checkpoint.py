"""Binary checkpoints of named float arrays.

Layout::

    8 bytes   magic b"VID2ODE1"
    8 bytes   little-endian uint64: header length L
    L bytes   UTF-8 JSON: {"meta": {...}, "arrays": [{"name", "shape", "offset"}, ...]}
    rest      little-endian float64 data; ``offset`` counts doubles from the start
              of this block, arrays stored in C order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VID2ODE1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> Path:
    entries, blocks, offset = [], [], 0
    for name, a in arrays.items():
        a = np.array(a, dtype="<f8", order="C")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blocks.append(a.ravel())
        offset += a.size
    header = json.dumps({"meta": meta or {}, "arrays": entries}).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        if blocks:
            fh.write(np.concatenate(blocks).astype("<f8").tobytes())
    return path


def load_checkpoint(path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a vid2ode checkpoint")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + n].decode())
    data = np.frombuffer(raw[16 + n:], dtype="<f8")
    arrays = {}
    for e in header["arrays"]:
        size = int(np.prod(e["shape"], dtype=int))
        chunk = data[e["offset"]:e["offset"] + size]
        if chunk.size != size:
            raise CheckpointError(f"{path}: truncated array {e['name']!r}")
        arrays[e["name"]] = chunk.reshape(e["shape"]).astype(float)
    return arrays, header["meta"]
