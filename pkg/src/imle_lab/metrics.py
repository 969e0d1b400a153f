"""Training distances and evaluation metrics.

Two training distances are provided: plain Euclidean (``l2``) and a
perceptual proxy comparing activations of a fixed random network. Both
expose ``embed`` so that Euclidean distance between embeddings equals the
metric, which lets the nearest-neighbour index stay metric-consistent.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import gaussian_kde

from . import tensor as T
from .tensor import Tensor


class DistanceMetric:
    kind = "base"

    def features(self, x: Tensor) -> list[Tensor]:
        raise NotImplementedError

    def __call__(self, a, b) -> Tensor:
        """Row-wise distance between batches ``a`` and ``b`` of shape (B, D); returns (B,)."""
        a, b = T.as_tensor(a), T.as_tensor(b)
        if a.shape[-1] != b.shape[-1]:
            raise T.ShapeError(f"distance: feature dims differ ({a.shape[-1]} vs {b.shape[-1]})")
        fa, fb = self.features(a), self.features(b)
        total = None
        for x, y in zip(fa, fb):
            part = T.sum_(T.square(x - y), axis=-1)
            total = part if total is None else total + part
        return T.sqrt(total)

    def embed(self, x: np.ndarray) -> np.ndarray:
        """Feature embedding whose Euclidean distances equal this metric."""
        with T.no_grad():
            feats = self.features(T.as_tensor(np.atleast_2d(x)))
        return np.concatenate([f.data for f in feats], axis=-1)

    def pairwise(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Distance matrix between the rows of ``a`` and the rows of ``b``."""
        ea, eb = self.embed(a).astype(np.float64), self.embed(b).astype(np.float64)
        sq = (ea * ea).sum(1)[:, None] + (eb * eb).sum(1)[None, :] - 2.0 * ea @ eb.T
        return np.sqrt(np.maximum(sq, 0.0))


class L2Metric(DistanceMetric):
    kind = "l2"

    def features(self, x: Tensor) -> list[Tensor]:
        return [x]


class PerceptualProxy(DistanceMetric):
    """LPIPS-like distance over a frozen, randomly initialized dense network.

    Layer activations (including the raw input) are compared and each layer
    is divided by sqrt(layer width * number of layers), so the distance is an
    RMS over layers and lives on the same scale as a per-pixel RMS.
    """

    kind = "perceptual_proxy"

    def __init__(self, dim: int, widths: Sequence[int] = (256, 128), seed: int = 1234):
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.weights = []
        prev = dim
        for w in widths:
            self.weights.append(rng.normal(0.0, np.sqrt(2.0 / prev), size=(prev, w)).astype(np.float32))
            prev = w
        n_layers = len(widths) + 1
        self.norms = [np.sqrt(dim * n_layers)] + [np.sqrt(w * n_layers) for w in widths]

    def features(self, x: Tensor) -> list[Tensor]:
        if x.shape[-1] != self.dim:
            raise T.ShapeError(f"perceptual proxy built for dim {self.dim}, got {x.shape[-1]}")
        feats = [x * (1.0 / self.norms[0])]
        h = x
        for w, norm in zip(self.weights, self.norms[1:]):
            h = T.leaky_relu(T.matmul(h, T.Tensor(w, dtype=x.dtype)))
            feats.append(h * (1.0 / norm))
        return feats


def make_metric(kind: str, dim: int, seed: int = 1234) -> DistanceMetric:
    if kind == "l2":
        return L2Metric()
    if kind == "perceptual_proxy":
        return PerceptualProxy(dim, seed=seed)
    raise ValueError(f"unknown metric {kind!r}")


def distance(metric: DistanceMetric, a, b) -> float:
    a, b = np.atleast_2d(np.asarray(a, dtype=np.float32)), np.atleast_2d(np.asarray(b, dtype=np.float32))
    if a.shape != b.shape:
        raise T.ShapeError(f"distance: shapes {a.shape} and {b.shape} differ")
    with T.no_grad():
        return float(metric(a, b).data[0])


# -- faithfulness-weighted variance --------------------------------------------

TABLE_BANDWIDTHS = (0.3, 0.2, 0.15)


@dataclass
class FWVConfig:
    sigma: float = 0.3
    metric: DistanceMetric | None = None

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.sigma}")


class WeightUnderflowError(ArithmeticError):
    pass


def faithfulness_weights(dists: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-np.square(dists) / (2.0 * sigma * sigma))


def faithfulness_weighted_variance(samples, reference, cfg: FWVConfig | float = 0.3) -> float:
    """Gaussian-kernel weighted spread of samples about their weighted mean.

    w_j = exp(-d(s_j, y)^2 / (2 sigma^2));
    FWV = sum_j w_j ||s_j - mean_w||^2 / sum_j w_j.
    """
    if not isinstance(cfg, FWVConfig):
        cfg = FWVConfig(sigma=float(cfg))
    metric = cfg.metric or L2Metric()
    s = np.asarray(samples, dtype=np.float64)
    if s.ndim == 1:
        s = s[:, None]
    if len(s) == 0:
        raise ValueError("faithfulness_weighted_variance needs at least one sample")
    y = np.asarray(reference, dtype=np.float64).reshape(1, -1)
    dists = metric.pairwise(s, y)[:, 0]
    w = faithfulness_weights(dists, cfg.sigma)
    total = w.sum()
    if total <= 0.0:
        raise WeightUnderflowError(
            f"all faithfulness weights underflowed at sigma={cfg.sigma}; "
            f"nearest sample is at distance {dists.min():.4g}, use a larger bandwidth"
        )
    centre = (w[:, None] * s).sum(0) / total
    spread = np.square(s - centre).sum(1)
    return float((w * spread).sum() / total)


# -- Frechet distance ----------------------------------------------------------

def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    """Symmetric square root via eigendecomposition, negative eigenvalues clamped to 0."""
    a = np.asarray(a, dtype=np.float64)
    a = 0.5 * (a + a.T)
    vals, vecs = np.linalg.eigh(a)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def trace_sqrt_product(s1: np.ndarray, s2: np.ndarray) -> float:
    """Tr((s1 s2)^{1/2}) for PSD s1, s2, computed as Tr((r s2 r)^{1/2}) with r = s1^{1/2}."""
    r = sqrtm_psd(s1)
    inner = r @ np.asarray(s2, dtype=np.float64) @ r
    vals = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    return float(np.sqrt(np.clip(vals, 0.0, None)).sum())


def frechet_from_moments(mu1, cov1, mu2, cov2) -> float:
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, dtype=np.float64)), np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    cov1, cov2 = np.atleast_2d(np.asarray(cov1, dtype=np.float64)), np.atleast_2d(np.asarray(cov2, dtype=np.float64))
    if mu1.shape != mu2.shape or cov1.shape != cov2.shape or cov1.shape != (mu1.size, mu1.size):
        raise T.ShapeError("frechet: moment shapes do not agree")
    diff = mu1 - mu2
    value = diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * trace_sqrt_product(cov1, cov2)
    return float(max(value, 0.0))


def gaussian_moments(feats: np.ndarray, eps: float | None = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or len(feats) < 2:
        raise ValueError("need at least two feature vectors to estimate a covariance")
    mu = feats.mean(0)
    cov = np.cov(feats, rowvar=False).reshape(feats.shape[1], feats.shape[1])
    if eps is None:
        if np.linalg.matrix_rank(cov) < cov.shape[0]:
            raise np.linalg.LinAlgError("degenerate covariance; pass eps > 0 to regularize")
    else:
        cov = cov + eps * np.eye(cov.shape[0])
    return mu, cov


def frechet_feature_distance(a, b, feature_map: Callable[[np.ndarray], np.ndarray] | None = None,
                             eps: float | None = 1e-6) -> float:
    fa = np.asarray(a) if feature_map is None else feature_map(np.asarray(a))
    fb = np.asarray(b) if feature_map is None else feature_map(np.asarray(b))
    return frechet_from_moments(*gaussian_moments(fa, eps), *gaussian_moments(fb, eps))


# -- mode coverage ---------------------------------------------------------------

def mode_coverage(samples, centers, radius: float) -> float:
    """Fraction of centres with at least one sample within ``radius``."""
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    samples = np.asarray(samples, dtype=np.float64)
    if len(centers) == 0:
        raise ValueError("need at least one mode centre")
    if samples.size == 0:
        return 0.0
    samples = samples.reshape(-1, centers.shape[1])
    d2 = np.square(samples[:, None, :] - centers[None, :, :]).sum(-1)
    return float(np.mean(d2.min(0) <= radius * radius))


def kde_region_contains(points, reference, level: float = 0.95) -> bool:
    """Whether ``reference`` lies in the highest-density region holding ``level`` of a Gaussian KDE.

    The density threshold is estimated from the fitted points themselves: the
    region is {p : kde(p) >= q}, with q the (1 - level) quantile of kde over
    the sample.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) <= pts.shape[1]:
        raise ValueError("need more points than dimensions to fit a KDE")
    kde = gaussian_kde(pts.T)
    threshold = np.quantile(kde(pts.T), 1.0 - level)
    return bool(kde(np.asarray(reference, dtype=np.float64).reshape(-1, 1))[0] >= threshold)
