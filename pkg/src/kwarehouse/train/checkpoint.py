"""KWCK checkpoint container.

Layout (all integers little-endian)::

    b"KWCK" | u32 version | u64 manifest length | manifest JSON (UTF-8) | payload

The manifest holds ``{"version", "tensors": [{name, shape, dtype, offset, nbytes}], "meta"}``;
tensor offsets are relative to the start of the payload and tile it without gaps.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"KWCK"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")


class CheckpointError(ValueError):
    pass


def _le(dtype: np.dtype) -> np.dtype:
    return np.dtype(dtype).newbyteorder("<")


def dumps(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=_le(arr.dtype))
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str,
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {"version": VERSION, "tensors": entries, "meta": meta or {}}
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, len(blob)) + blob + b"".join(chunks)


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(data) < _HEADER.size:
        raise CheckpointError("file too short for a KWCK header")
    magic, version, mlen = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _HEADER.size
    if len(data) < start + mlen:
        raise CheckpointError("truncated manifest")
    try:
        manifest = json.loads(data[start:start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from exc
    payload = memoryview(data)[start + mlen:]

    tensors = {}
    expected = 0
    for e in manifest["tensors"]:
        if e["offset"] != expected:
            raise CheckpointError(f"tensor {e['name']!r} at offset {e['offset']}, expected {expected}")
        dtype = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        if count * dtype.itemsize != e["nbytes"]:
            raise CheckpointError(f"tensor {e['name']!r}: nbytes {e['nbytes']} inconsistent with shape/dtype")
        if e["offset"] + e["nbytes"] > len(payload):
            raise CheckpointError(f"tensor {e['name']!r} runs past end of payload")
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=e["offset"]).reshape(e["shape"])
        tensors[e["name"]] = arr.astype(dtype.newbyteorder("="), copy=True)
        expected += e["nbytes"]
    if expected != len(payload):
        raise CheckpointError(f"payload is {len(payload)} bytes but manifest accounts for {expected}")
    return tensors, manifest["meta"]


def save(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
