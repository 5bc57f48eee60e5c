"""Checkpoint files: a JSON manifest plus one little-endian float64 blob."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write ``<path>.json`` and ``<path>.bin``; arrays keep insertion order."""
    path = Path(path)
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset,
                        "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format_version": FORMAT_VERSION, "dtype": "<f8",
                "blob": path.name + ".bin", "arrays": entries, "meta": meta or {}}
    _atomic_write(path.with_name(path.name + ".bin"), b"".join(chunks))
    _atomic_write(path.with_name(path.name + ".json"),
                  (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode())


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if path.suffix == ".json":
        path = path.with_suffix("")
    manifest_path = path.with_name(path.name + ".json")
    if not manifest_path.exists():
        raise FileNotFoundError(f"checkpoint manifest {manifest_path} not found")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')!r}")
    blob = (manifest_path.parent / manifest["blob"]).read_bytes()
    arrays = {}
    for e in manifest["arrays"]:
        buf = blob[e["offset"]: e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return arrays, manifest["meta"]
