"""Manifest + blob persistence shared by datasets and checkpoints.

``<stem>.json`` is a JSON manifest listing each array's name, rows, cols
and byte offset into ``<stem>.bin``, a flat little-endian float64 blob.
Arbitrary JSON metadata rides along under ``"meta"``.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError, MissingInputError

FORMAT = "dssl-blob-v1"


def save_arrays(stem, arrays: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    manifest_path = stem.with_suffix(".json")
    blob_path = stem.with_suffix(".bin")
    entries = []
    offset = 0
    with open(blob_path, "wb") as fh:
        for name, arr in arrays.items():
            a = np.asarray(arr, dtype=np.float64)
            if a.ndim == 1:
                a = a.reshape(-1, 1)
            if a.ndim != 2:
                raise ConfigError(f"array {name!r} is not 2-D")
            raw = np.ascontiguousarray(a, dtype="<f8").tobytes()
            fh.write(raw)
            entries.append({"name": name, "rows": int(a.shape[0]), "cols": int(a.shape[1]),
                            "offset": offset})
            offset += len(raw)
    manifest = {"format": FORMAT, "blob": blob_path.name, "arrays": entries, "meta": meta or {}}
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest_path


def load_arrays(stem) -> tuple[dict[str, np.ndarray], dict]:
    stem = Path(stem)
    manifest_path = stem if stem.suffix == ".json" else stem.with_suffix(".json")
    if not manifest_path.exists():
        raise MissingInputError(f"missing manifest {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT:
        raise ConfigError(f"{manifest_path}: unknown format {manifest.get('format')!r}")
    blob_path = manifest_path.parent / manifest["blob"]
    if not blob_path.exists():
        raise MissingInputError(f"missing blob {blob_path}")
    buf = blob_path.read_bytes()
    arrays = {}
    for e in manifest["arrays"]:
        n = e["rows"] * e["cols"]
        a = np.frombuffer(buf, dtype="<f8", count=n, offset=e["offset"])
        arrays[e["name"]] = a.astype(np.float64).reshape(e["rows"], e["cols"])
    return arrays, manifest["meta"]


def content_hash(stem) -> str:
    """sha256 over manifest and blob bytes."""
    stem = Path(stem)
    manifest_path = stem if stem.suffix == ".json" else stem.with_suffix(".json")
    if not manifest_path.exists():
        raise MissingInputError(f"missing manifest {manifest_path}")
    h = hashlib.sha256(manifest_path.read_bytes())
    blob = manifest_path.parent / json.loads(manifest_path.read_text())["blob"]
    h.update(blob.read_bytes())
    return h.hexdigest()
