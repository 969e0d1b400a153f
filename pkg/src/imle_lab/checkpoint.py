"""Parameter checkpoints: one little-endian f32 blob plus a JSON index.

``<stem>.bin`` holds every tensor back to back; ``<stem>.json`` lists
``{"name", "shape", "offset"}`` per tensor, offset counted in bytes.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

_LE_F32 = np.dtype("<f4")


def _stem(path) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".bin", ".json") else path


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> Path:
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    index = []
    offset = 0
    with open(stem.with_suffix(".bin"), "wb") as fh:
        for name, arr in tensors.items():
            buf = np.ascontiguousarray(arr, dtype=_LE_F32)
            fh.write(buf.tobytes())
            index.append({"name": name, "shape": list(buf.shape), "offset": offset})
            offset += buf.nbytes
    sidecar = {"format": "f32le", "tensors": index}
    if meta is not None:
        sidecar["meta"] = meta
    stem.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return stem


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    stem = _stem(path)
    bin_path, json_path = stem.with_suffix(".bin"), stem.with_suffix(".json")
    if not bin_path.exists() or not json_path.exists():
        raise FileNotFoundError(f"checkpoint {stem} is missing its .bin or .json part")
    sidecar = json.loads(json_path.read_text())
    blob = bin_path.read_bytes()
    out = {}
    for entry in sidecar["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = entry["offset"] + 4 * count
        if end > len(blob):
            raise ValueError(f"checkpoint blob truncated at tensor {entry['name']!r}")
        arr = np.frombuffer(blob, dtype=_LE_F32, count=count, offset=entry["offset"])
        out[entry["name"]] = arr.astype(np.float32).reshape(entry["shape"])
    return out, sidecar.get("meta", {})
