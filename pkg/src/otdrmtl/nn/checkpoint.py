"""Checkpoint files: ``<stem>.json`` manifest plus ``<stem>.bin`` tensor blob.

The blob holds all tensors concatenated in manifest order as little-endian
floats (32-bit by default, 64-bit on request for exact training resume).
The manifest records each tensor's name, shape and element offset and the
SHA-256 of the blob, and is written last.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import DataError, IntegrityError, VersionError
from ..io_utils import atomic_write_bytes, atomic_write_text, sha256_hex

FORMAT = "otdrmtl-checkpoint"
FORMAT_VERSION = 1
DTYPES = {"float32": "<f4", "float64": "<f8"}


def checkpoint_paths(stem: str | Path) -> tuple[Path, Path]:
    stem = Path(stem)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def save_checkpoint(
    stem: str | Path, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None, dtype: str = "float32"
) -> tuple[Path, Path]:
    if dtype not in DTYPES:
        raise ValueError(f"dtype must be one of {sorted(DTYPES)}")
    mpath, bpath = checkpoint_paths(stem)
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        a = np.asarray(arr, dtype=DTYPES[dtype])  # keeps 0-d shapes; tobytes() is C order
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        chunks.append(a.tobytes())
        offset += a.size
    blob = b"".join(chunks)
    manifest = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "dtype": dtype,
        "byte_order": "little",
        "blob": bpath.name,
        "sha256": sha256_hex(blob),
        "tensors": entries,
        "meta": dict(meta or {}),
    }
    atomic_write_bytes(bpath, blob)
    atomic_write_text(mpath, json.dumps(manifest, indent=1, sort_keys=True))
    return mpath, bpath


def load_checkpoint(stem: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Returns ``(tensors as float64, meta)``; verifies format, version and hash."""
    mpath, bpath = checkpoint_paths(stem)
    for p in (mpath, bpath):
        if not p.exists():
            raise DataError(f"checkpoint file missing: {p}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed checkpoint manifest {mpath}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise DataError(f"{mpath} is not an otdrmtl checkpoint")
    if manifest.get("version") != FORMAT_VERSION:
        raise VersionError(f"checkpoint version {manifest.get('version')} unsupported (expected {FORMAT_VERSION})")
    blob = bpath.read_bytes()
    if sha256_hex(blob) != manifest["sha256"]:
        raise IntegrityError(f"checkpoint blob {bpath} does not match its manifest hash")
    flat = np.frombuffer(blob, dtype=DTYPES[manifest["dtype"]])
    tensors = {}
    for e in manifest["tensors"]:
        seg = flat[e["offset"] : e["offset"] + e["count"]]
        tensors[e["name"]] = seg.astype(np.float64).reshape(e["shape"])
    return tensors, manifest["meta"]
