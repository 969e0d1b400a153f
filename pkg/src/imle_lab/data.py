"""Datasets and transforms: Gaussian mixtures, MNIST IDX files, PCA, block downsampling."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


# -- Gaussian mixtures -----------------------------------------------------------

@dataclass
class GMMSpec:
    centers: np.ndarray
    stddev: float
    weights: np.ndarray

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.weights) != len(self.centers):
            raise ValueError("one weight per centre required")
        if np.any(self.weights <= 0) or not np.isclose(self.weights.sum(), 1.0):
            raise ValueError("mixture weights must be positive and sum to 1")
        if self.stddev < 0:
            raise ValueError("stddev must be non-negative")

    @property
    def n_components(self) -> int:
        return len(self.centers)

    def top_cluster(self, count: int = 3) -> np.ndarray:
        """Indices of the ``count`` components with the largest y coordinate."""
        return np.argsort(-self.centers[:, 1], kind="stable")[:count]


def ring_gmm(k: int = 5, radius: float = 2.0, stddev: float = 0.1) -> GMMSpec:
    """Equal-weight components on a ring, the first one at the top."""
    angles = np.pi / 2 + 2 * np.pi * np.arange(k) / k
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return GMMSpec(centers=centers, stddev=stddev, weights=np.full(k, 1.0 / k))


def sample_gmm(spec: GMMSpec, n: int, rng: np.random.Generator, return_labels: bool = False):
    if n < 1:
        raise ValueError("n must be >= 1")
    labels = rng.choice(spec.n_components, size=n, p=spec.weights)
    pts = spec.centers[labels] + spec.stddev * rng.standard_normal((n, 2))
    pts = pts.astype(np.float32)
    return (pts, labels) if return_labels else pts


# -- MNIST IDX -------------------------------------------------------------------

class IdxFormatError(ValueError):
    pass


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


@dataclass
class MnistSet:
    images: np.ndarray  # (n, 28, 28) uint8
    labels: np.ndarray | None = None  # (n,) uint8

    def __len__(self) -> int:
        return len(self.images)

    def flat(self, scale: bool = True) -> np.ndarray:
        x = self.images.reshape(len(self.images), -1)
        return (x.astype(np.float32) / 255.0) if scale else x


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Parse an IDX file of unsigned bytes (``.gz`` is decompressed transparently)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file shorter than the 4-byte magic")
    (magic,) = struct.unpack(">i", raw[:4])
    if magic >> 8 != 0x08 or magic & 0xFF < 1:
        raise IdxMagicError(f"{path}: magic 0x{magic:08x} is not an unsigned-byte IDX header")
    if expected_magic is not None and magic != expected_magic:
        raise IdxMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: header needs {header} bytes, file has {len(raw)}")
    dims = struct.unpack(f">{ndim}i", raw[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header < count:
        raise IdxTruncatedError(f"{path}: payload has {len(raw) - header} bytes, dims {dims} need {count}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims).copy()


def write_idx(path, array: np.ndarray) -> None:
    path = Path(path)
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">i", 0x0800 | array.ndim) + struct.pack(f">{array.ndim}i", *array.shape)
    opener = gzip.open if path.suffix == ".gz" else open
    path.parent.mkdir(parents=True, exist_ok=True)
    with opener(path, "wb") as fh:
        fh.write(header + array.tobytes())


def load_idx(images_path, labels_path=None) -> MnistSet:
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = None
    if labels_path is not None:
        labels = read_idx(labels_path, IDX_LABELS_MAGIC)
        if len(labels) != len(images):
            raise IdxFormatError(f"{len(images)} images but {len(labels)} labels")
    return MnistSet(images=images, labels=labels)


def save_mnist(prefix, mnist: MnistSet, gz: bool = True) -> tuple[Path, Path | None]:
    ext = ".gz" if gz else ""
    prefix = Path(prefix)
    img = prefix.parent / f"{prefix.name}-images-idx3-ubyte{ext}"
    write_idx(img, mnist.images)
    lab = None
    if mnist.labels is not None:
        lab = prefix.parent / f"{prefix.name}-labels-idx1-ubyte{ext}"
        write_idx(lab, mnist.labels)
    return img, lab


def load_mnist_split(directory, split: str = "train") -> MnistSet:
    """Load ``<split>-images-idx3-ubyte[.gz]`` (+ labels if present) from a directory."""
    directory = Path(directory)
    for ext in ("", ".gz"):
        img = directory / f"{split}-images-idx3-ubyte{ext}"
        if img.exists():
            lab = directory / f"{split}-labels-idx1-ubyte{ext}"
            return load_idx(img, lab if lab.exists() else None)
    raise FileNotFoundError(f"no {split}-images-idx3-ubyte[.gz] under {directory}")


# -- PCA ---------------------------------------------------------------------------

@dataclass
class PCAModel:
    mean: np.ndarray
    components: np.ndarray  # (k, D), orthonormal rows
    variances: np.ndarray  # (k,)

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def truncated(self, k: int) -> "PCAModel":
        return PCAModel(self.mean, self.components[:k], self.variances[:k])


def pca_fit(data, k: int) -> PCAModel:
    """Top-k eigenvectors of the sample covariance (ddof=1), largest-magnitude entry positive."""
    x = np.asarray(data, dtype=np.float64)
    n, d = x.shape
    if not 1 <= k <= min(n, d):
        raise ValueError(f"k={k} outside [1, min(n, D)] = [1, {min(n, d)}]")
    mean = x.mean(0)
    xc = x - mean
    cov = xc.T @ xc / max(n - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(-vals, kind="stable")[:k]
    comps = vecs[:, order].T
    pivots = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), pivots])
    comps *= signs[:, None]
    return PCAModel(mean=mean, components=comps, variances=np.clip(vals[order], 0.0, None))


def pca_project(model: PCAModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.mean.shape[0]:
        raise ValueError(f"pca_project: got dim {x.shape[-1]}, model dim {model.mean.shape[0]}")
    return (x - model.mean) @ model.components.T


def pca_reconstruct(model: PCAModel, coords) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[-1] != model.k:
        raise ValueError(f"pca_reconstruct: got {coords.shape[-1]} coords, model has {model.k}")
    return model.mean + coords @ model.components


def nearest_by_pca_prefix(model: PCAModel, dataset, query, k: int = 10, count: int = 10):
    """Indices and distances of the ``count`` rows closest to ``query`` in the first-k PCA coordinates."""
    dataset = np.asarray(dataset)
    if count > len(dataset):
        raise ValueError(f"count={count} exceeds dataset size {len(dataset)}")
    prefix = model.truncated(k)
    coords = pca_project(prefix, dataset)
    q = pca_project(prefix, np.asarray(query).reshape(1, -1))
    d = np.sqrt(np.square(coords - q).sum(1))
    order = np.lexsort((np.arange(len(d)), d))[:count]
    return order, d[order]


# -- downsampling -----------------------------------------------------------------------

def downsample_avg(image, factor: int) -> np.ndarray:
    """Non-overlapping ``factor`` x ``factor`` block means over the last two axes."""
    img = np.asarray(image)
    h, w = img.shape[-2:]
    if factor < 1 or h % factor or w % factor:
        raise ValueError(f"image sides {h}x{w} are not divisible by factor {factor}")
    if factor == 1:
        return img.copy()
    blocks = img.reshape(img.shape[:-2] + (h // factor, factor, w // factor, factor))
    return blocks.mean(axis=(-3, -1)).astype(img.dtype if np.issubdtype(img.dtype, np.floating) else np.float64)


def downsample_flat(batch, side: int, factor: int) -> np.ndarray:
    """Downsample flattened square images of shape (..., side*side)."""
    batch = np.asarray(batch)
    lead = batch.shape[:-1]
    img = batch.reshape(lead + (side, side))
    out = downsample_avg(img, factor)
    return out.reshape(lead + (-1,))


# -- paired data -------------------------------------------------------------------

@dataclass
class PairedDataset:
    """Inputs x_i with exactly one observed output y_i each."""

    inputs: np.ndarray
    targets: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float32)
        self.targets = np.asarray(self.targets, dtype=np.float32)
        if len(self.inputs) != len(self.targets):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.targets)} targets")
        if len(self.targets) == 0:
            raise ValueError("empty dataset")

    def __len__(self) -> int:
        return len(self.targets)
