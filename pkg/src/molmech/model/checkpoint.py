"""Single-file tensor container: JSON manifest plus little-endian payload.

Layout::

    b"MOLMECH\\0"  u32 version  u64 manifest_len  manifest (UTF-8 JSON)  payload

The manifest holds ``kind`` (lm | sae | activations), free-form ``meta`` and a
tensor directory (name, shape, dtype, offset, nbytes, sha256).  Keys are
sorted, so writing the same content always yields the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MOLMECH\0"
VERSION = 1
_HEAD = struct.Struct("<8sIQ")
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "int32": "<i4", "uint8": "u1", "bool": "?"}


class CorruptFile(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


def write_container(path: str | Path, kind: str, meta: dict, tensors: dict[str, np.ndarray],
                    version: int = VERSION) -> str:
    """Write tensors in sorted-name order; returns the file's sha256."""
    directory = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        dtype = arr.dtype.name
        if dtype not in _DTYPES:
            raise TypeError(f"unsupported dtype {dtype} for {name}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        directory.append({
            "name": name, "shape": list(arr.shape), "dtype": dtype,
            "offset": offset, "nbytes": len(raw), "sha256": hashlib.sha256(raw).hexdigest(),
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps({"kind": kind, "meta": meta, "tensors": directory}, sort_keys=True,
                          separators=(",", ":")).encode()
    blob = _HEAD.pack(MAGIC, version, len(manifest)) + manifest + b"".join(chunks)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def read_container(path: str | Path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Read and verify a container; returns ``(meta, tensors)``."""
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size:
        raise CorruptFile(f"{path}: truncated header")
    magic, version, mlen = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise CorruptFile(f"{path}: bad magic")
    if version != VERSION:
        raise VersionMismatch(f"{path}: container version {version}, expected {VERSION}")
    start = _HEAD.size
    if len(data) < start + mlen:
        raise CorruptFile(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[start:start + mlen])
    except ValueError as exc:
        raise CorruptFile(f"{path}: unreadable manifest") from exc
    if kind is not None and manifest.get("kind") != kind:
        raise CorruptFile(f"{path}: expected a {kind!r} container, found {manifest.get('kind')!r}")
    payload = memoryview(data)[start + mlen:]
    expected = sum(t["nbytes"] for t in manifest["tensors"])
    if len(payload) != expected:
        raise CorruptFile(f"{path}: payload is {len(payload)} bytes, manifest says {expected}")
    tensors = {}
    for t in manifest["tensors"]:
        raw = payload[t["offset"]:t["offset"] + t["nbytes"]]
        if hashlib.sha256(raw).hexdigest() != t["sha256"]:
            raise CorruptFile(f"{path}: checksum mismatch for {t['name']}")
        arr = np.frombuffer(raw, dtype=_DTYPES[t["dtype"]]).reshape(t["shape"])
        tensors[t["name"]] = arr.astype(t["dtype"], copy=True)
    return manifest["meta"], tensors
