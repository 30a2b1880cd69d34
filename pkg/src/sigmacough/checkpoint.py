"""Versioned JSON container for named tensors (CNN checkpoints, classifier files).

Floats are written with ``repr`` precision so a save/load cycle is exact and
identical inputs give byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

FORMAT = "sigmacough.container"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _encode(arr: np.ndarray) -> dict:
    arr = np.asarray(arr)
    if arr.dtype.kind in "iub":
        dtype, data = "int64", [int(v) for v in arr.reshape(-1)]
    else:
        dtype, data = "float64", [float(v) for v in arr.reshape(-1)]
    return {"dtype": dtype, "shape": list(arr.shape), "data": data}


def _decode(name: str, blob: dict) -> np.ndarray:
    try:
        arr = np.asarray(blob["data"], dtype=np.int64 if blob["dtype"] == "int64" else np.float64)
        return arr.reshape(blob["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"tensor {name!r} is malformed: {exc}") from None


def dumps(kind: str, tensors: dict, config: dict | None = None, rng_seed: int | None = None) -> bytes:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "rng_seed": rng_seed,
        "config": config or {},
        "tensors": {name: _encode(t) for name, t in tensors.items()},
    }
    return (json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def loads(raw: bytes, kind: str | None = None) -> tuple[dict, dict]:
    """Return (tensors, header) where header carries kind, config and rng_seed."""
    try:
        doc = json.loads(raw)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"not a JSON container: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CheckpointError("unrecognized container format")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported container version {doc.get('version')}")
    if kind is not None and doc.get("kind") != kind:
        raise CheckpointError(f"expected a {kind!r} container, found {doc.get('kind')!r}")
    tensors = {name: _decode(name, blob) for name, blob in doc.get("tensors", {}).items()}
    header = {k: doc.get(k) for k in ("kind", "config", "rng_seed")}
    return tensors, header


def save(path, kind: str, tensors: dict, config: dict | None = None, rng_seed: int | None = None) -> str:
    """Write atomically; returns the sha256 of the written bytes."""
    raw = dumps(kind, tensors, config, rng_seed)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(raw)
    os.replace(tmp, path)
    return hashlib.sha256(raw).hexdigest()


def load(path, kind: str | None = None) -> tuple[dict, dict]:
    return loads(Path(path).read_bytes(), kind)
