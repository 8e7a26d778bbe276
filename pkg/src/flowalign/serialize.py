"""Checkpoint and hashing helpers.

Checkpoints are JSON parameter dumps: ``{"meta": {...}, "params":
{name: {shape, data}}}`` written with sorted keys so the SHA-256 of the
file bytes is a stable content hash. Floats are serialized via repr and
round-trip bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .tensor import Tensor, tensor_from_json, tensor_to_json


def sha256_bytes(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def params_payload(params: dict[str, Tensor], meta: dict | None = None) -> bytes:
    doc = {
        "meta": meta or {},
        "params": {k: tensor_to_json(p) for k, p in sorted(params.items())},
    }
    return json.dumps(doc, sort_keys=True).encode("utf-8")


def params_hash(params: dict[str, Tensor], meta: dict | None = None) -> str:
    """Content hash of a parameter set (meta excluded by default)."""
    return sha256_bytes(params_payload(params, meta={} if meta is None else meta))


def save_checkpoint(params: dict[str, Tensor], path, meta: dict | None = None) -> str:
    """Write a JSON checkpoint; returns its SHA-256 content hash."""
    payload = params_payload(params, meta)
    Path(path).write_bytes(payload)
    return sha256_bytes(payload)


def load_checkpoint(path) -> tuple[dict[str, Tensor], dict]:
    doc = json.loads(Path(path).read_text())
    params = {k: tensor_from_json(v) for k, v in doc["params"].items()}
    return params, doc.get("meta", {})
