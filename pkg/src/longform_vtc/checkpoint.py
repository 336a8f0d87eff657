"""Checkpoint container: JSON header followed by raw little-endian tensor blocks.

Layout::

    b"LFVTC1\\n" | uint64 header length | header JSON | tensor bytes ...

The header lists ``{name, shape, dtype, offset, nbytes}`` per tensor plus a
free-form ``meta`` object (configs, normalisation stats, etc).
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

MAGIC = b"LFVTC1\n"


def save_tensors(path: Union[str, Path], tensors: Dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        if arr.dtype == np.float64:
            blob = arr.astype("<f8").tobytes()
            dt = "float64"
        else:
            blob = arr.astype("<f4").tobytes()
            dt = "float32"
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dt, "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_tensors(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    (hlen,) = struct.unpack("<Q", raw[pos:pos + 8])
    pos += 8
    header = json.loads(raw[pos:pos + hlen])
    base = pos + hlen
    tensors = {}
    for e in header["tensors"]:
        dt = "<f8" if e["dtype"] == "float64" else "<f4"
        start = base + e["offset"]
        arr = np.frombuffer(raw[start:start + e["nbytes"]], dtype=dt).reshape(tuple(e["shape"]))
        tensors[e["name"]] = arr.astype(np.float64 if e["dtype"] == "float64" else np.float32)
    return tensors, header["meta"]


def file_sha256(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def params_checksum(params: Dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k]).tobytes())
    return h.hexdigest()
