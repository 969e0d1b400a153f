"""Artifact writers: CSV tables, PGM/PNG images, image grids and the run manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image


def threads_from_env() -> int:
    """Worker cap from ``IMLE_LAB_THREADS``; unset or 0 selects sequential deterministic mode."""
    raw = os.environ.get("IMLE_LAB_THREADS", "0").strip() or "0"
    n = int(raw)
    if n < 0:
        raise ValueError(f"IMLE_LAB_THREADS must be >= 0, got {n}")
    return n


def deterministic_mode() -> bool:
    return threads_from_env() == 0


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(path, rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> Path:
    """Header row plus one line per mapping; floats use the shortest round-trip repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])
    return path


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def to_uint8(img, lo: float | None = 0.0, hi: float | None = 1.0) -> np.ndarray:
    """Clip to [lo, hi] and map linearly onto 0..255; ``None`` bounds use the data range."""
    a = np.asarray(img, dtype=np.float64)
    lo = float(a.min()) if lo is None else lo
    hi = float(a.max()) if hi is None else hi
    if hi <= lo:
        return np.zeros(a.shape, dtype=np.uint8)
    return np.round(np.clip((a - lo) / (hi - lo), 0.0, 1.0) * 255).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> Path:
    """Binary PGM (P5), 8-bit."""
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("write_pgm expects a 2-D uint8 array")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.format != "PPM" or im.mode != "L":
            raise ValueError(f"{path} is not an 8-bit greyscale PGM")
        return np.array(im)


def write_png(path, img: np.ndarray) -> Path:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("write_png expects a 2-D uint8 array")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed encoder settings keep the bytes stable across runs
    Image.fromarray(img, mode="L").save(path, format="PNG", optimize=False, compress_level=6)
    return path


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im.convert("L"))


def write_image(stem, img: np.ndarray) -> list[Path]:
    """Write ``<stem>.pgm`` and ``<stem>.png``."""
    stem = Path(stem)
    return [write_pgm(stem.with_suffix(".pgm"), img), write_png(stem.with_suffix(".png"), img)]


def tile(rows: Sequence[Sequence[np.ndarray]], pad: int = 1, fill: int = 0) -> np.ndarray:
    """Arrange equally sized uint8 tiles into a grid; short rows are padded with ``fill``."""
    if not rows or not any(len(r) for r in rows):
        raise ValueError("no tiles to arrange")
    first = next(t for r in rows for t in r)
    th, tw = first.shape
    ncols = max(len(r) for r in rows)
    out = np.full((len(rows) * (th + pad) - pad, ncols * (tw + pad) - pad), fill, dtype=np.uint8)
    for i, r in enumerate(rows):
        for j, t in enumerate(r):
            if t.shape != (th, tw):
                raise ValueError(f"tile shape {t.shape} != {(th, tw)}")
            out[i * (th + pad): i * (th + pad) + th, j * (tw + pad): j * (tw + pad) + tw] = t
    return out


def flat_images(batch, side: int) -> list[np.ndarray]:
    return [to_uint8(v.reshape(side, side)) for v in np.asarray(batch)]


def histogram_grid(points, bins: int = 100, extent: float = 3.0) -> np.ndarray:
    """2-D sample counts on a ``bins`` x ``bins`` grid over [-extent, extent]^2, row 0 at the top.

    Points outside the window are clamped into the border cells so the grid
    always sums to the number of points.
    """
    pts = np.clip(np.asarray(points, dtype=np.float64), -extent, extent)
    edges = np.linspace(-extent, extent, bins + 1)
    counts, _, _ = np.histogram2d(pts[:, 1], pts[:, 0], bins=[edges, edges])
    return counts[::-1].astype(np.int64)


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def content_hash(paths: Iterable[Path], root: Path) -> tuple[str, dict[str, str]]:
    """Per-file blob hashes plus one combined hash over the sorted ``name hash`` lines."""
    files = {}
    for p in sorted(Path(x) for x in paths):
        files[p.relative_to(root).as_posix()] = git_blob_hash(p.read_bytes())
    listing = "".join(f"{name} {h}\n" for name, h in sorted(files.items())).encode()
    return git_blob_hash(listing), files


def write_manifest(out_dir, command: str, config: Mapping, outputs: Iterable[Path],
                   extra: Mapping | None = None) -> Path:
    out_dir = Path(out_dir)
    combined, files = content_hash(outputs, out_dir)
    payload = {
        "command": command,
        "config": config,
        "threads": threads_from_env(),
        "outputs": files,
        "content_hash": combined,
    }
    if extra:
        payload.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default))
    return path


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")
