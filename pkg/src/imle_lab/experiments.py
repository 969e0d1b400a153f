"""Desk-scale experiments behind the ``imle-lab`` commands.

Each ``cmd_*`` function takes its config dataclass, writes CSV tables,
PGM/PNG images and a JSON manifest into ``cfg.out_dir`` and returns a
:class:`RunResult`. Timing columns are left empty in sequential
deterministic mode (``IMLE_LAB_THREADS`` unset or 0) so that reruns give
byte-identical CSV files; the manifest records the wall time instead.
"""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import io
from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    PairedDataset,
    PCAModel,
    downsample_flat,
    load_mnist_split,
    nearest_by_pca_prefix,
    pca_fit,
    pca_project,
    pca_reconstruct,
    ring_gmm,
    sample_gmm,
)
from .gan import Discriminator, GANConfig, train_gan
from .imle import (
    TrainConfig,
    independent_codes,
    rng_streams,
    train_conditional,
    train_progressive,
    train_unconditional,
    traverse_latent,
)
from .knn import BruteForceIndex, PrioritizedParams, PrioritizedProjectionIndex
from .metrics import (
    TABLE_BANDWIDTHS,
    FWVConfig,
    faithfulness_weighted_variance,
    frechet_feature_distance,
    kde_region_contains,
    make_metric,
    mode_coverage,
)
from .models import Generator, GeneratorConfig, ProgressiveGenerator, model_from_config, sample_latent


# -- configs -------------------------------------------------------------------------

def _train(**kw) -> TrainConfig:
    return TrainConfig(**kw)


@dataclass
class ModeCoverageConfig:
    seed: int = 0
    out_dir: str = "runs/mode-coverage"
    n_components: int = 5
    ring_radius: float = 2.0
    stddev: float = 0.1
    n_data: int = 1000
    model: dict = field(default_factory=lambda: {"latent_dim": 4, "width": 32, "growth": 8, "mapping_width": 32})
    train: TrainConfig = field(default_factory=lambda: _train(
        num_samples=256, outer_iters=2000, inner_iters=5, lr=1e-2, batch_size=64, minibatch_size=64))
    gan: GANConfig = field(default_factory=GANConfig)
    disc_hidden: int = 128
    eval_every: int = 50
    eval_samples: int = 1000
    heatmap_samples: int = 10000
    bins: int = 100
    extent: float = 3.0


@dataclass
class MnistPCAConfig:
    seed: int = 0
    out_dir: str = "runs/mnist-pca"
    data_dir: str = "data/mnist5k"
    n_train: int | None = None
    pca_prefix: int = 10
    coords: tuple[int, int] = (10, 11)  # zero-based, i.e. the 11th and 12th components
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=lambda: _train(outer_iters=600))
    metric: str = "perceptual_proxy"
    n_heldout: int = 10
    grid_predictions: int = 6
    n_variance_samples: int = 20
    n_marginal_samples: int = 200
    n_neighbors: int = 10
    kde_level: float = 0.95
    regression_contrast: bool = True


@dataclass
class ProgressiveConfig:
    seed: int = 0
    out_dir: str = "runs/progressive-sr"
    data_dir: str = "data/mnist5k"
    n_train: int | None = None
    input_side: int = 7
    n_stages: int = 2
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=lambda: _train(outer_iters=300))
    metric: str = "perceptual_proxy"
    pool_sizes: list[int] | None = None
    n_heldout: int = 10
    n_samples: int = 20
    grid_samples: int = 6
    bandwidths: tuple[float, ...] = TABLE_BANDWIDTHS
    frechet_components: int = 32
    n_frechet: int = 500


@dataclass
class TraverseConfig:
    seed: int = 0
    out_dir: str = "runs/traverse"
    checkpoint: str = "runs/mnist-pca/model"
    data_dir: str = "data/mnist5k"
    n_targets: int = 4
    steps: int = 200
    step_size: float = 0.05
    method: str = "adam"
    snapshot_interval: int = 20
    metric: str = "perceptual_proxy"


@dataclass
class DCIBenchConfig:
    seed: int = 0
    out_dir: str = "runs/dci-bench"
    ks: list[int] = field(default_factory=lambda: [1000])
    dims: list[int] = field(default_factory=lambda: [64])
    budget_fractions: list[float] = field(default_factory=lambda: [0.02, 0.05, 0.1, 0.2, 0.5, 1.0])
    n_queries: int = 200
    intrinsic_dim: int = 8
    noise: float = 0.1
    num_simple: int = 10
    num_composite: int = 2


CONFIGS = {
    "mode-coverage": ModeCoverageConfig,
    "mnist-pca": MnistPCAConfig,
    "progressive-sr": ProgressiveConfig,
    "traverse": TraverseConfig,
    "dci-bench": DCIBenchConfig,
}

_NESTED = {"train": TrainConfig, "gan": GANConfig}


def config_from_dict(cls, payload: dict[str, Any]):
    """Build a config dataclass, rejecting unknown keys; nested trainer configs may be partial."""
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    defaults = cls()
    kwargs = {}
    for key, value in payload.items():
        if key in _NESTED and isinstance(value, dict):
            base = dataclasses.asdict(getattr(defaults, key))
            base.update(value)
            value = _NESTED[key](**base)
        elif isinstance(getattr(defaults, key), tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def load_config(command: str, path=None, seed: int | None = None, out_dir: str | None = None):
    """JSON file (optional) then flag overrides; flags win. The seed reaches every RNG stream."""
    if command not in CONFIGS:
        raise ValueError(f"unknown command {command!r}; choose from {sorted(CONFIGS)}")
    payload = {}
    if path is not None:
        payload = json.loads(Path(path).read_text())
    if seed is not None:
        payload["seed"] = seed
    if out_dir is not None:
        payload["out_dir"] = out_dir
    cfg = config_from_dict(CONFIGS[command], payload)
    for key in _NESTED:
        if hasattr(cfg, key):
            getattr(cfg, key).seed = cfg.seed
    return cfg


def config_to_dict(cfg) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg), default=io._json_default))


@dataclass
class RunResult:
    command: str
    out_dir: Path
    files: list[Path]
    summary: dict
    arrays: dict = field(default_factory=dict)  # in-memory extras, not written to the manifest


def _timing(value_ms: float):
    return None if io.deterministic_mode() else value_ms


def _finish(command: str, cfg, files: list[Path], summary: dict, t0: float,
            arrays: dict | None = None) -> RunResult:
    out = Path(cfg.out_dir)
    manifest = io.write_manifest(out, command, config_to_dict(cfg), files,
                                 extra={"runtime_s": time.perf_counter() - t0,
                                        "summary": _jsonable(summary)})
    return RunResult(command, out, files + [manifest], summary, arrays or {})


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=io._json_default))


# -- mode coverage -----------------------------------------------------------------------

COVERAGE_COLUMNS = ["method", "iteration", "coverage", "near_mode_fraction", "loss", "elapsed_ms"]


def _coverage_stats(samples: np.ndarray, centers: np.ndarray, radius: float) -> tuple[float, float]:
    d = np.sqrt(np.square(samples[:, None, :] - centers[None]).sum(-1)).min(1)
    return mode_coverage(samples, centers, radius), float(np.mean(d <= radius))


def _render_counts(counts: np.ndarray) -> np.ndarray:
    return io.to_uint8(np.log1p(counts), lo=0.0, hi=None)


def cmd_mode_coverage(cfg: ModeCoverageConfig) -> RunResult:
    t0 = time.perf_counter()
    out = Path(cfg.out_dir)
    spec = ring_gmm(cfg.n_components, cfg.ring_radius, cfg.stddev)
    radius = 3.0 * cfg.stddev
    streams = rng_streams(cfg.seed)
    data = sample_gmm(spec, cfg.n_data, streams["data"])
    gcfg = GeneratorConfig(input_dim=0, output_dim=2, **cfg.model)
    eval_codes = sample_latent(gcfg.latent_dim, streams["eval"], cfg.eval_samples)
    heat_codes = sample_latent(gcfg.latent_dim, streams["eval"], cfg.heatmap_samples)

    rows = []

    def evaluate(gen, method, it, loss, start):
        with T.no_grad():
            samples = gen(None, eval_codes).data
        cov, near = _coverage_stats(samples, spec.centers, radius)
        rows.append({"method": method, "iteration": it, "coverage": cov, "near_mode_fraction": near,
                     "loss": loss, "elapsed_ms": _timing((time.perf_counter() - start) * 1e3)})

    imle_gen = Generator(gcfg, rng_streams(cfg.seed)["init"])
    start = time.perf_counter()
    evaluate(imle_gen, "imle", 0, None, start)

    def on_outer(p, row):
        if p % cfg.eval_every == 0:
            evaluate(imle_gen, "imle", p, row["mean_selected_distance"], start)

    train_unconditional(imle_gen, data, cfg.train, make_metric("l2", 2), on_outer=on_outer)

    gan_gen = Generator(gcfg, rng_streams(cfg.seed)["init"])
    disc = Discriminator(2, hidden=cfg.disc_hidden, rng=np.random.default_rng([cfg.seed, 99]))
    gan_cfg = dataclasses.replace(cfg.gan, log_every=cfg.eval_every, seed=cfg.seed)
    start = time.perf_counter()
    evaluate(gan_gen, "gan", 0, None, start)

    def gan_eval(gen, it):
        with T.no_grad():
            samples = gen(None, eval_codes).data
        cov, near = _coverage_stats(samples, spec.centers, radius)
        return {"coverage": cov, "near_mode_fraction": near}

    for row in train_gan(gan_gen, disc, data, gan_cfg, evaluate=gan_eval).history:
        rows.append({"method": "gan", "iteration": row["iteration"], "coverage": row["coverage"],
                     "near_mode_fraction": row["near_mode_fraction"], "loss": row["loss_g"],
                     "elapsed_ms": _timing(row["wall_time_ms"])})

    files = []
    files.append(io.write_csv(out / "coverage.csv", rows, COVERAGE_COLUMNS))

    grids = {"data": io.histogram_grid(sample_gmm(spec, cfg.heatmap_samples, streams["eval"]), cfg.bins, cfg.extent)}
    for name, gen in (("imle", imle_gen), ("gan", gan_gen)):
        with T.no_grad():
            grids[name] = io.histogram_grid(gen(None, heat_codes).data, cfg.bins, cfg.extent)
    for name, counts in grids.items():
        files += io.write_image(out / f"heatmap_{name}", _render_counts(counts))

    summary = {}
    for method in ("imle", "gan"):
        mrows = [r for r in rows if r["method"] == method]
        final_it = mrows[-1]["iteration"]
        tail = [r for r in mrows if r["iteration"] > final_it - 500 and r["iteration"] > 0]
        summary[method] = {
            "final_coverage": mrows[-1]["coverage"],
            "min_coverage_final_500": min(r["coverage"] for r in tail),
            "final_near_mode_fraction": mrows[-1]["near_mode_fraction"],
            "first_full_coverage": next((r["iteration"] for r in mrows if r["coverage"] == 1.0), None),
        }
    summary_rows = [{"method": m, **v} for m, v in summary.items()]
    files.append(io.write_csv(out / "summary.csv", summary_rows))
    return _finish("mode-coverage", cfg, files, summary, t0, {"grids": grids, "rows": rows})


# -- MNIST helpers ---------------------------------------------------------------------

def _load_mnist(data_dir: str, n_train: int | None, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    train = load_mnist_split(data_dir, "train").flat()
    test = load_mnist_split(data_dir, "t10k").flat()
    if n_train is not None and n_train < len(train):
        train = train[np.sort(rng.choice(len(train), size=n_train, replace=False))]
    return train, test


def _heldout(test: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if n > len(test):
        raise ValueError(f"asked for {n} held-out inputs but the test split has {len(test)}")
    return np.sort(rng.choice(len(test), size=n, replace=False))


def pca_prefix_inputs(model: PCAModel, images: np.ndarray, k: int) -> np.ndarray:
    """Inputs of the MNIST-PCA task: images rebuilt from their first ``k`` principal components."""
    prefix = model.truncated(k)
    return pca_reconstruct(prefix, pca_project(prefix, images)).astype(np.float32)


def _pca_tensors(model: PCAModel) -> dict[str, np.ndarray]:
    return {"pca.mean": model.mean, "pca.components": model.components, "pca.variances": model.variances}


def _pca_from_tensors(tensors: dict) -> PCAModel:
    return PCAModel(tensors["pca.mean"].astype(np.float64), tensors["pca.components"].astype(np.float64),
                    tensors["pca.variances"].astype(np.float64))


def _history_csv(path: Path, history: list[dict]) -> Path:
    rows = [{**r, "wall_time_ms": _timing(r["wall_time_ms"])} for r in history]
    return io.write_csv(path, rows, list(history[0].keys()))


def _mean_pairwise(metric, samples: np.ndarray) -> float:
    d = metric.pairwise(samples, samples)
    iu = np.triu_indices(len(samples), 1)
    return float(d[iu].mean())


# -- MNIST-PCA ------------------------------------------------------------------------------

def cmd_mnist_pca(cfg: MnistPCAConfig) -> RunResult:
    t0 = time.perf_counter()
    out = Path(cfg.out_dir)
    streams = rng_streams(cfg.seed)
    train, test = _load_mnist(cfg.data_dir, cfg.n_train, streams["data"])
    n_comp = max(cfg.pca_prefix, max(cfg.coords) + 1)
    pca = pca_fit(train, n_comp)
    inputs = pca_prefix_inputs(pca, train, cfg.pca_prefix)
    dataset = PairedDataset(inputs, train)
    metric = make_metric(cfg.metric, train.shape[1])
    proxy = make_metric("perceptual_proxy", train.shape[1])
    gcfg = GeneratorConfig(input_dim=train.shape[1], output_dim=train.shape[1], **cfg.model)

    gen = Generator(gcfg, streams["init"])
    history = train_conditional(gen, dataset, cfg.train, metric).history
    files = [_history_csv(out / "train_log.csv", history)]
    save_checkpoint(out / "model", {**gen.state_dict(), **_pca_tensors(pca)},
                    meta={"kind": "generator", "config": gcfg.to_dict(), "task": "mnist-pca",
                          "pca_prefix": cfg.pca_prefix, "seed": cfg.seed})
    files += [out / "model.bin", out / "model.json"]

    baseline = None
    if cfg.regression_contrast:
        baseline = Generator(gcfg, rng_streams(cfg.seed)["init"])
        reg_cfg = dataclasses.replace(cfg.train, num_samples=1)
        reg_history = train_conditional(baseline, dataset, reg_cfg, metric).history
        files.append(_history_csv(out / "train_log_regression.csv", reg_history))

    held = _heldout(test, cfg.n_heldout, streams["eval"])
    x_held = pca_prefix_inputs(pca, test[held], cfg.pca_prefix)
    n_draw = max(cfg.n_marginal_samples, cfg.n_variance_samples, cfg.grid_predictions)
    a, b = cfg.coords
    side = int(round(np.sqrt(train.shape[1])))
    marg_rows, nb_rows, summ_rows = [], [], []
    grid_cols = []
    predictions = {}
    for slot, (t_idx, x) in enumerate(zip(held, x_held)):
        codes = sample_latent(gcfg.latent_dim, streams["eval"], n_draw)
        xs = np.repeat(x[None], n_draw, axis=0)
        with T.no_grad():
            preds = gen(xs, codes).data
        predictions[int(t_idx)] = preds
        first = preds[: cfg.n_variance_samples]
        coords = pca_project(pca, preds)
        x_prefix = pca_project(pca.truncated(cfg.pca_prefix), x[None])[0]
        prefix_dev = np.abs(coords[:, : cfg.pca_prefix] - x_prefix).max(1)
        ref = pca_project(pca, test[t_idx][None])[0]
        marg = coords[: cfg.n_marginal_samples, [a, b]]
        for j, (c, dev) in enumerate(zip(marg, prefix_dev)):
            marg_rows.append({"input": slot, "kind": "prediction", "index": j, "pc_a": c[0], "pc_b": c[1],
                              "prefix_max_dev": dev})
        marg_rows.append({"input": slot, "kind": "reference", "index": int(t_idx), "pc_a": ref[a], "pc_b": ref[b]})
        nb_idx, nb_dist = nearest_by_pca_prefix(pca, train, test[t_idx], k=cfg.pca_prefix, count=cfg.n_neighbors)
        nb_coords = pca_project(pca, train[nb_idx])
        for rank, (i, d, c) in enumerate(zip(nb_idx, nb_dist, nb_coords)):
            nb_rows.append({"input": slot, "rank": rank, "train_index": int(i), "prefix_distance": d,
                            "pc_a": c[a], "pc_b": c[b]})
            marg_rows.append({"input": slot, "kind": "neighbor", "index": int(i), "pc_a": c[a], "pc_b": c[b]})
        row = {
            "input": slot,
            "test_index": int(t_idx),
            "pixel_variance": float(first.var(0).mean()),
            "mean_pairwise_proxy": _mean_pairwise(proxy, first),
            "self_proxy": float(proxy.pairwise(first[:1], first[:1])[0, 0]),
            "kde_inside": int(kde_region_contains(marg, ref[[a, b]], cfg.kde_level)),
            "max_prefix_dev": float(prefix_dev.max()),
        }
        if baseline is not None:
            with T.no_grad():
                reg = baseline(xs[: cfg.n_variance_samples], codes[: cfg.n_variance_samples]).data
            row["regression_pixel_variance"] = float(reg.var(0).mean())
        summ_rows.append(row)
        grid_cols.append([x] + list(preds[: cfg.grid_predictions]) + [test[t_idx]])

    files.append(io.write_csv(out / "marginals.csv", marg_rows,
                              ["input", "kind", "index", "pc_a", "pc_b", "prefix_max_dev"]))
    files.append(io.write_csv(out / "neighbors.csv", nb_rows))
    files.append(io.write_csv(out / "summary.csv", summ_rows))
    grid = [[io.to_uint8(col[r].reshape(side, side)) for col in grid_cols] for r in range(len(grid_cols[0]))]
    files += io.write_image(out / "samples", io.tile(grid))

    summary = {
        "kde_inside": int(sum(r["kde_inside"] for r in summ_rows)),
        "min_pixel_variance": min(r["pixel_variance"] for r in summ_rows),
        "min_pairwise_proxy": min(r["mean_pairwise_proxy"] for r in summ_rows),
        "max_prefix_dev": max(r["max_prefix_dev"] for r in summ_rows),
        "final_selected_distance": history[-1]["mean_selected_distance"],
    }
    if baseline is not None:
        summary["max_regression_pixel_variance"] = max(r["regression_pixel_variance"] for r in summ_rows)
    return _finish("mnist-pca", cfg, files, summary, t0,
                   {"generator": gen, "baseline": baseline, "pca": pca, "rows": summ_rows,
                    "predictions": predictions, "heldout": held})


# -- progressive upscaling ---------------------------------------------------------------------

def _upscale(img: np.ndarray, factor: int) -> np.ndarray:
    return np.kron(img, np.ones((factor, factor), dtype=img.dtype))


def cmd_progressive_sr(cfg: ProgressiveConfig) -> RunResult:
    t0 = time.perf_counter()
    out = Path(cfg.out_dir)
    streams = rng_streams(cfg.seed)
    train, test = _load_mnist(cfg.data_dir, cfg.n_train, streams["data"])
    full = int(round(np.sqrt(train.shape[1])))
    sides = [cfg.input_side * 2 ** (s + 1) for s in range(cfg.n_stages)]
    if sides[-1] != full:
        raise ValueError(f"{cfg.n_stages} doublings of side {cfg.input_side} give {sides[-1]}, images are {full}")

    def stage_targets(y):
        return [downsample_flat(y, full, full // s) for s in sides]

    x_train = downsample_flat(train, full, full // cfg.input_side)
    dataset = PairedDataset(x_train, train)
    pg = ProgressiveGenerator.build(cfg.input_side, cfg.n_stages, streams["init"], **cfg.model)
    metrics = [make_metric(cfg.metric, s * s) for s in sides]
    history = train_progressive(pg, dataset, cfg.train, metrics, stage_targets, cfg.pool_sizes).history
    files = [_history_csv(out / "train_log.csv", history)]
    save_checkpoint(out / "model", pg.state_dict(),
                    meta={"kind": "progressive", **pg.config_dict(), "task": "progressive-sr", "seed": cfg.seed})
    files += [out / "model.bin", out / "model.json"]

    held = _heldout(test, cfg.n_heldout, streams["eval"])
    proxy = make_metric("perceptual_proxy", train.shape[1])
    fwv_rows, grids = [], [[] for _ in sides]
    for slot, t_idx in enumerate(held):
        y = test[t_idx]
        x = downsample_flat(y[None], full, full // cfg.input_side)
        xs = np.repeat(x, cfg.n_samples, axis=0).astype(np.float32)
        with T.no_grad():
            outs = [o.data for o in pg(xs, independent_codes(pg, cfg.n_samples, streams["eval"]))]
        final = outs[-1]
        row = {"input": slot, "test_index": int(t_idx), "pixel_variance": float(final.var(0).mean())}
        for sigma in cfg.bandwidths:
            row[f"fwv_sigma_{sigma:g}"] = faithfulness_weighted_variance(final, y, FWVConfig(sigma, proxy))
        fwv_rows.append(row)
        targets = stage_targets(y[None])
        for s, side in enumerate(sides):
            lo = _upscale(x[0].reshape(cfg.input_side, cfg.input_side), side // cfg.input_side)
            col = [lo] + [o.reshape(side, side) for o in outs[s][: cfg.grid_samples]]
            col.append(targets[s][0].reshape(side, side))
            grids[s].append(col)
    for s, side in enumerate(sides):
        cols = grids[s]
        grid = [[io.to_uint8(col[r]) for col in cols] for r in range(len(cols[0]))]
        files += io.write_image(out / f"samples_stage{s + 1}_{side}x{side}", io.tile(grid))
    files.append(io.write_csv(out / "fwv.csv", fwv_rows))

    # Frechet distance on top PCA features: one independent sample per test input vs the originals
    pca = pca_fit(train, cfg.frechet_components)
    n_fd = min(cfg.n_frechet, len(test))
    fd_idx = np.sort(streams["eval"].choice(len(test), size=n_fd, replace=False))
    x_fd = downsample_flat(test[fd_idx], full, full // cfg.input_side).astype(np.float32)
    with T.no_grad():
        gen_fd = pg(x_fd, independent_codes(pg, n_fd, streams["eval"]))[-1].data
    fd = frechet_feature_distance(gen_fd, test[fd_idx], lambda v: pca_project(pca, v))
    fd_upsampled = frechet_feature_distance(
        np.stack([_upscale(v.reshape(cfg.input_side, cfg.input_side), full // cfg.input_side).ravel() for v in x_fd]),
        test[fd_idx], lambda v: pca_project(pca, v))
    fd_rows = [{"method": "imle", "n": n_fd, "frechet_pca": fd},
               {"method": "nearest_upsample", "n": n_fd, "frechet_pca": fd_upsampled}]
    files.append(io.write_csv(out / "frechet.csv", fd_rows))

    summary = {
        "min_pixel_variance": min(r["pixel_variance"] for r in fwv_rows),
        "mean_fwv": {f"{s:g}": float(np.mean([r[f"fwv_sigma_{s:g}"] for r in fwv_rows])) for s in cfg.bandwidths},
        "frechet_pca": fd,
        "frechet_pca_upsample_baseline": fd_upsampled,
        "final_stage_losses": {k: v for k, v in history[-1].items() if k.startswith("stage")},
    }
    return _finish("progressive-sr", cfg, files, summary, t0, {"model": pg, "rows": fwv_rows, "history": history})


# -- latent traversal ----------------------------------------------------------------------------

def load_generator(path) -> tuple[Generator, dict, dict]:
    """Rebuild a generator from a checkpoint written by a training command."""
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") not in ("generator", "progressive"):
        raise ValueError(f"checkpoint {path} carries no model config")
    model = model_from_config(meta, np.random.default_rng(0))
    model.load_state_dict(tensors)
    return model, tensors, meta


def cmd_traverse(cfg: TraverseConfig) -> RunResult:
    t0 = time.perf_counter()
    out = Path(cfg.out_dir)
    if cfg.snapshot_interval < 1:
        raise ValueError("snapshot_interval must be >= 1")
    ckpt = Path(cfg.checkpoint)
    if not ckpt.with_suffix(".json").exists() and not Path(str(ckpt) + ".json").exists():
        raise FileNotFoundError(f"checkpoint {ckpt} not found; run mnist-pca first")
    gen, tensors, meta = load_generator(ckpt)
    if meta.get("task") != "mnist-pca":
        raise ValueError("traverse expects a checkpoint trained by mnist-pca")
    pca = _pca_from_tensors(tensors)
    streams = rng_streams(cfg.seed)
    test = load_mnist_split(cfg.data_dir, "t10k").flat()
    metric = make_metric(cfg.metric, test.shape[1])
    side = int(round(np.sqrt(test.shape[1])))
    targets = _heldout(test, cfg.n_targets, streams["eval"])
    dist_rows, summ_rows, strip_rows = [], [], []
    for slot, t_idx in enumerate(targets):
        y = test[t_idx]
        x = pca_prefix_inputs(pca, y[None], meta["pca_prefix"])[0]
        z0 = sample_latent(gen.latent_dim, streams["eval"])
        traj = traverse_latent(gen, x, y, z0, cfg.steps, cfg.step_size, metric, cfg.method)
        for step, d in enumerate(traj.distances):
            dist_rows.append({"target": slot, "step": step, "distance": d})
        frames = [traj.steps[i].output for i in range(0, len(traj.steps), cfg.snapshot_interval)]
        strip_rows.append([io.to_uint8(f.reshape(side, side)) for f in frames])
        d = traj.distances
        summ_rows.append({"target": slot, "test_index": int(t_idx), "initial": d[0], "final": d[-1],
                          "ratio": d[-1] / d[0], "aborted": int(traj.aborted)})
    files = [io.write_csv(out / "distances.csv", dist_rows), io.write_csv(out / "summary.csv", summ_rows)]
    files += io.write_image(out / "strip", io.tile(strip_rows))
    files += io.write_image(out / "targets", io.tile([[io.to_uint8(test[t].reshape(side, side)) for t in targets]]))
    summary = {"max_ratio": max(r["ratio"] for r in summ_rows), "mean_ratio": float(np.mean([r["ratio"] for r in summ_rows])),
               "frames_per_strip": len(strip_rows[0])}
    return _finish("traverse", cfg, files, summary, t0, {"rows": summ_rows})


# -- nearest-neighbour benchmark ---------------------------------------------------------------------

BENCH_COLUMNS = ["k", "D", "budget", "recall1", "recall10", "us_per_query"]


def low_dim_instance(k: int, dim: int, n_queries: int, rng: np.random.Generator, intrinsic_dim: int = 8,
                     noise: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Points and queries near a random ``intrinsic_dim``-dimensional subspace of R^dim.

    Sample pools produced by a generator concentrate near a low-dimensional
    set, which is the regime the projection index is meant for.
    """
    basis = rng.standard_normal((intrinsic_dim, dim)) / np.sqrt(intrinsic_dim)
    points = rng.standard_normal((k, intrinsic_dim)) @ basis + noise * rng.standard_normal((k, dim))
    queries = rng.standard_normal((n_queries, intrinsic_dim)) @ basis + noise * rng.standard_normal((n_queries, dim))
    return points, queries


def cmd_dci_bench(cfg: DCIBenchConfig) -> RunResult:
    t0 = time.perf_counter()
    out = Path(cfg.out_dir)
    rng = rng_streams(cfg.seed)["data"]
    rows = []
    for k in cfg.ks:
        for dim in cfg.dims:
            points, queries = low_dim_instance(k, dim, cfg.n_queries, rng, cfg.intrinsic_dim, cfg.noise)
            brute = BruteForceIndex(points)
            k_nn = min(10, k)
            truth = np.stack([brute.query(q, k_nn)[0] for q in queries])
            index = PrioritizedProjectionIndex(points, PrioritizedParams(cfg.num_simple, cfg.num_composite, cfg.seed))
            for frac in cfg.budget_fractions:
                budget = max(1, int(round(frac * k)))
                hits1 = hits10 = 0
                start = time.perf_counter()
                for q, tr in zip(queries, truth):
                    ids, _ = index.query(q, k_nn, budget)
                    hits1 += int(len(ids) > 0 and ids[0] == tr[0])
                    hits10 += len(set(ids.tolist()) & set(tr.tolist()))
                elapsed = time.perf_counter() - start
                rows.append({"k": k, "D": dim, "budget": budget, "recall1": hits1 / len(queries),
                             "recall10": hits10 / (len(queries) * k_nn),
                             "us_per_query": None if io.deterministic_mode() else elapsed / len(queries) * 1e6})
    files = [io.write_csv(out / "bench.csv", rows, BENCH_COLUMNS)]
    return _finish("dci-bench", cfg, files, {"rows": rows}, t0)


COMMANDS = {
    "mode-coverage": cmd_mode_coverage,
    "mnist-pca": cmd_mnist_pca,
    "progressive-sr": cmd_progressive_sr,
    "traverse": cmd_traverse,
    "dci-bench": cmd_dci_bench,
}
