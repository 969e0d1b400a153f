"""Implicit maximum likelihood estimation: objectives, selection and training loops.

Conditional training follows the usual two-level loop. Each outer iteration
draws a batch of examples and ``m`` latent codes per example, and keeps the
code whose output lands closest to the observed target. Then ``M`` gradient
steps on random minibatches of that batch pull the selected outputs, which
are recomputed under the current parameters, toward their targets.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .data import PairedDataset
from .knn import PrioritizedProjectionIndex
from .metrics import DistanceMetric
from .models import Generator, ProgressiveGenerator, sample_latent
from .optim import make_optimizer
from .tensor import Tensor

log = logging.getLogger(__name__)

STREAMS = {"init": 0, "codes": 1, "batch": 2, "eval": 3, "data": 4, "gan": 5}


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent named generators derived from one seed."""
    return {name: np.random.default_rng([seed, idx]) for name, idx in STREAMS.items()}


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message: str, example_index: int | None = None):
        super().__init__(message)
        self.example_index = example_index


@dataclass
class TrainConfig:
    num_samples: int = 20  # m
    outer_iters: int = 100  # N
    inner_iters: int = 50  # M
    lr: float = 1e-3  # eta
    batch_size: int = 64  # |S|
    minibatch_size: int = 16  # |S~|
    seed: int = 0
    optimizer: str = "adam"
    staleness: str = "refresh"  # selections recomputed every outer iteration
    knn_threshold: int = 200_000  # use the projection index when m*|S| exceeds this
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples (m) must be >= 1")
        if self.outer_iters < 1:
            raise ValueError("outer_iters (N) must be >= 1")
        if self.inner_iters < 0:
            raise ValueError("inner_iters (M) must be >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 1 <= self.minibatch_size <= self.batch_size:
            raise ValueError("need 1 <= minibatch_size <= batch_size")
        if self.staleness != "refresh":
            raise ValueError("only per-iteration selection refresh is supported")

    def check_dataset(self, n: int) -> None:
        if self.batch_size > n:
            raise ValueError(f"batch_size {self.batch_size} exceeds dataset size {n}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SelectionMap:
    """Per-example selected code index, the code itself and its distance."""

    indices: np.ndarray
    codes: np.ndarray
    distances: np.ndarray


def sequential_sum(values: Tensor) -> Tensor:
    """Sum a 1-D tensor left to right; the reduction order is fixed and documented."""
    total = values[0]
    for i in range(1, values.shape[0]):
        total = total + values[i]
    return total


# -- objectives ---------------------------------------------------------------------

def _check_codes(codes: np.ndarray, n: int, latent_dim: int) -> None:
    if codes.ndim != 3 or codes.shape[0] != n or codes.shape[2] != latent_dim:
        raise ValueError(f"expected codes of shape ({n}, m, {latent_dim}), got {codes.shape}")
    if codes.shape[1] < 1:
        raise ValueError("need at least one code per example")


def distance_table(gen, x, y, codes, metric: DistanceMetric) -> np.ndarray:
    """d(T(x_i, z_ij), y_i) for every example i and code j, shape (n, m)."""
    y = np.asarray(y, dtype=np.float32)
    codes = np.asarray(codes, dtype=np.float32)
    n, m, dz = codes.shape
    flat_z = codes.reshape(n * m, dz)
    flat_y = np.repeat(y, m, axis=0)
    with T.no_grad():
        flat_x = None if x is None else np.repeat(np.asarray(x, dtype=np.float32), m, axis=0)
        out = gen(flat_x, flat_z)
        d = metric(out, flat_y)
    return d.data.reshape(n, m)


def select(table: np.ndarray) -> np.ndarray:
    """Row-wise argmin; ties go to the lowest index."""
    return np.argmin(table, axis=1)


def imle_loss_conditional(gen, x, y, codes, metric: DistanceMetric) -> tuple[Tensor, SelectionMap]:
    """sum_i min_j d(T(x_i, z_ij), y_i). Codes of example i are only matched against y_i."""
    y = np.asarray(y, dtype=np.float32)
    if len(y) == 0:
        raise ValueError("empty batch")
    codes = np.asarray(codes, dtype=np.float32)
    _check_codes(codes, len(y), gen.latent_dim)
    table = distance_table(gen, x, y, codes, metric)
    idx = select(table)
    chosen = codes[np.arange(len(y)), idx]
    rows = metric(gen(x, chosen), y)
    return sequential_sum(rows), SelectionMap(idx, chosen, table[np.arange(len(y)), idx])


def imle_loss_unconditional(gen, targets, codes, metric: DistanceMetric,
                            backend: str = "brute") -> tuple[Tensor, SelectionMap]:
    """sum_i min_j d(T(z_j), y_i) with one shared pool of codes."""
    y = np.asarray(targets, dtype=np.float32)
    codes = np.asarray(codes, dtype=np.float32)
    if len(y) == 0 or len(codes) == 0:
        raise ValueError("need at least one target and one code")
    idx, dists = match_unconditional(gen, y, codes, metric, backend)
    chosen = codes[idx]
    rows = metric(gen(None, chosen), y)
    return sequential_sum(rows), SelectionMap(idx, chosen, dists)


def match_unconditional(gen, y, codes, metric, backend: str = "brute", budget: int | None = None):
    with T.no_grad():
        samples = gen(None, codes).data
    if backend == "brute":
        n, m = len(y), len(codes)
        with T.no_grad():
            d = metric(np.tile(samples, (n, 1)), np.repeat(y, m, axis=0)).data.reshape(n, m)
        idx = select(d)
        return idx, d[np.arange(n), idx]
    if backend == "prioritized":
        index = PrioritizedProjectionIndex(samples, metric=metric)
        res = [index.query(q, 1, budget) for q in y]
        return np.array([r[0][0] for r in res]), np.array([r[1][0] for r in res], dtype=np.float32)
    raise ValueError(f"unknown matching backend {backend!r}")


# -- progressive chains ------------------------------------------------------------

@dataclass
class HierarchicalSelection:
    codes: list[np.ndarray]  # per stage, (n, dz_s)
    indices: list[np.ndarray]  # per stage, (n,)
    distances: list[np.ndarray]  # per stage, (n,)


def hierarchical_select(pg, x, stage_targets: Sequence[np.ndarray], pool_sizes: Sequence[int],
                        metrics: Sequence[DistanceMetric], rng: np.random.Generator | None = None,
                        code_pools: Sequence[np.ndarray] | None = None) -> HierarchicalSelection:
    """Greedy stage-by-stage code selection (train time only).

    Stage s draws ``pool_sizes[s]`` codes per example, runs stage s on the output
    produced by the codes already frozen for stages < s, keeps the code closest to
    ``stage_targets[s]`` and freezes it. ``code_pools`` may supply the candidate
    codes explicitly, as arrays of shape (n, m_s, dz_s).
    """
    stages = pg.stages
    if not stages:
        raise ValueError("need at least one stage")
    if len(pool_sizes) != len(stages) or len(stage_targets) != len(stages) or len(metrics) != len(stages):
        raise ValueError("pool sizes, targets and metrics must have one entry per stage")
    if any(m < 1 for m in pool_sizes):
        raise ValueError(f"pool sizes must be >= 1, got {list(pool_sizes)}")
    n = len(stage_targets[0])
    h = None if x is None else np.asarray(x, dtype=np.float32)
    result = HierarchicalSelection([], [], [])
    for s, stage in enumerate(stages):
        m = pool_sizes[s]
        if code_pools is not None:
            pool = np.asarray(code_pools[s], dtype=np.float32)
        else:
            if rng is None:
                raise ValueError("either rng or code_pools is required")
            pool = sample_latent(stage.latent_dim, rng, n * m).reshape(n, m, -1)
        table = distance_table(stage, h, stage_targets[s], pool, metrics[s])
        idx = select(table)
        chosen = pool[np.arange(n), idx]
        result.codes.append(chosen)
        result.indices.append(idx)
        result.distances.append(table[np.arange(n), idx])
        with T.no_grad():
            h = stage(h, chosen).data
    return result


def independent_codes(pg, n: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Test-time codes: every stage draws its own code independently."""
    return [sample_latent(s.latent_dim, rng, n) for s in pg.stages]


def intermediate_loss(outputs: Sequence[Tensor], stage_targets: Sequence, metrics: Sequence[DistanceMetric]):
    """Per-example sum over stages of d(output_s, target_s).

    Returns ``(total, per_stage)`` where ``total`` has shape (B,) and
    ``per_stage`` lists the (B,) distance of every stage.
    """
    if not (len(outputs) == len(stage_targets) == len(metrics)):
        raise ValueError("outputs, targets and metrics must align per stage")
    per_stage = []
    for out, tgt, metric in zip(outputs, stage_targets, metrics):
        tgt = T.as_tensor(np.atleast_2d(np.asarray(tgt, dtype=out.dtype)))
        if out.shape[-1] != tgt.shape[-1]:
            raise T.ShapeError(f"stage output dim {out.shape[-1]} != target dim {tgt.shape[-1]}")
        per_stage.append(metric(out, tgt))
    total = per_stage[0]
    for part in per_stage[1:]:
        total = total + part
    return total, per_stage


# -- training ------------------------------------------------------------------------

@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)

    @property
    def losses(self) -> np.ndarray:
        return np.array([row["mean_selected_distance"] for row in self.history])


class _BatchSampler:
    """Epoch-style batches: a permutation is consumed without replacement, then redrawn."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self._perm = np.empty(0, dtype=np.int64)

    def next(self) -> np.ndarray:
        if len(self._perm) < self.batch_size:
            self._perm = self.rng.permutation(self.n)
        batch, self._perm = self._perm[: self.batch_size], self._perm[self.batch_size:]
        return np.sort(batch)


def _check_finite(values: np.ndarray, batch: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        idx = int(batch[bad[0]])
        raise NonFiniteLossError(f"non-finite {what} at example {idx}", idx)


def _fit(model, n: int, cfg: TrainConfig, select_fn, loss_fn, n_stages: int,
         on_outer: Callable[[int, dict], None] | None = None) -> TrainResult:
    streams = rng_streams(cfg.seed)
    sampler = _BatchSampler(n, cfg.batch_size, streams["batch"])
    opt = make_optimizer(cfg.optimizer, model.parameters(), cfg.lr)
    result = TrainResult()
    for p in range(1, cfg.outer_iters + 1):
        t0 = time.perf_counter()
        batch = sampler.next()
        sel, stage_dists = select_fn(batch, streams["codes"])
        total_d = np.sum(stage_dists, axis=0)
        _check_finite(total_d, batch, "selection distance")
        for _ in range(cfg.inner_iters):
            sub = np.sort(streams["batch"].choice(len(batch), size=cfg.minibatch_size, replace=False))
            opt.zero_grad()
            rows = loss_fn(batch[sub], sel, sub)
            _check_finite(rows.data, batch[sub], "training loss")
            loss = sequential_sum(rows) * (1.0 / len(sub))
            loss.backward()
            opt.step()
        row = {"outer_iter": p, "mean_selected_distance": float(np.mean(total_d))}
        if n_stages > 1:
            for s in range(n_stages):
                row[f"stage{s + 1}_loss"] = float(np.mean(stage_dists[s]))
        row["wall_time_ms"] = (time.perf_counter() - t0) * 1e3
        result.history.append(row)
        if cfg.checkpoint_every and p % cfg.checkpoint_every == 0 and cfg.checkpoint_dir:
            save_checkpoint(Path(cfg.checkpoint_dir) / f"iter{p:06d}", model.state_dict())
        if on_outer is not None:
            on_outer(p, row)
    return result


def train_conditional(gen: Generator, dataset: PairedDataset, cfg: TrainConfig,
                      metric: DistanceMetric, on_outer=None) -> TrainResult:
    cfg.check_dataset(len(dataset))
    x_all, y_all = dataset.inputs, dataset.targets

    def select_fn(batch, rng):
        codes = sample_latent(gen.latent_dim, rng, len(batch) * cfg.num_samples)
        codes = codes.reshape(len(batch), cfg.num_samples, -1)
        table = distance_table(gen, x_all[batch], y_all[batch], codes, metric)
        _check_finite(table.min(1), batch, "selection distance")
        idx = select(table)
        chosen = codes[np.arange(len(batch)), idx]
        return chosen, [table[np.arange(len(batch)), idx]]

    def loss_fn(rows, chosen, sub):
        return metric(gen(x_all[rows], chosen[sub]), y_all[rows])

    return _fit(gen, len(dataset), cfg, select_fn, loss_fn, 1, on_outer)


def train_unconditional(gen: Generator, data: np.ndarray, cfg: TrainConfig,
                        metric: DistanceMetric, on_outer=None) -> TrainResult:
    """Unconditional variant: one shared pool of ``num_samples`` codes per outer iteration."""
    data = np.asarray(data, dtype=np.float32)
    cfg.check_dataset(len(data))
    backend = "prioritized" if cfg.num_samples * cfg.batch_size > cfg.knn_threshold else "brute"

    def select_fn(batch, rng):
        codes = sample_latent(gen.latent_dim, rng, cfg.num_samples)
        idx, dists = match_unconditional(gen, data[batch], codes, metric, backend)
        return codes[idx], [dists]

    def loss_fn(rows, chosen, sub):
        return metric(gen(None, chosen[sub]), data[rows])

    return _fit(gen, len(data), cfg, select_fn, loss_fn, 1, on_outer)


def train_progressive(pg: ProgressiveGenerator, dataset: PairedDataset, cfg: TrainConfig,
                      metrics: Sequence[DistanceMetric],
                      stage_targets: Callable[[np.ndarray], list[np.ndarray]],
                      pool_sizes: Sequence[int] | None = None, on_outer=None) -> TrainResult:
    """Conditional training of a chain with hierarchical sampling and intermediate supervision."""
    cfg.check_dataset(len(dataset))
    pool_sizes = list(pool_sizes or [cfg.num_samples] * len(pg.stages))
    x_all, y_all = dataset.inputs, dataset.targets
    targets_all = stage_targets(y_all)

    def select_fn(batch, rng):
        sel = hierarchical_select(pg, x_all[batch], [t[batch] for t in targets_all], pool_sizes,
                                  metrics, rng=rng)
        # report the intermediate loss of the final selected path, stage by stage
        with T.no_grad():
            outs = pg(x_all[batch], sel.codes)
            _, per_stage = intermediate_loss(outs, [t[batch] for t in targets_all], metrics)
        return sel.codes, [d.data for d in per_stage]

    def loss_fn(rows, chosen, sub):
        outs = pg(x_all[rows], [c[sub] for c in chosen])
        total, _ = intermediate_loss(outs, [t[rows] for t in targets_all], metrics)
        return total

    return _fit(pg, len(dataset), cfg, select_fn, loss_fn, len(pg.stages), on_outer)


# -- latent traversal ----------------------------------------------------------------

@dataclass
class TraversalStep:
    z: np.ndarray
    output: np.ndarray
    distance: float


@dataclass
class Trajectory:
    steps: list[TraversalStep]
    aborted: bool = False

    @property
    def distances(self) -> np.ndarray:
        return np.array([s.distance for s in self.steps])


def traverse_latent(gen, x, y_target, z_init, steps: int, step_size: float,
                    metric: DistanceMetric, method: str = "adam") -> Trajectory:
    """Descend d(T(x, z), y) over z with the generator frozen; record every iterate.

    ``method`` is ``"sgd"`` for plain steps of size ``step_size`` or ``"adam"``
    for Adam with learning rate ``step_size``.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    z = T.Tensor(np.asarray(z_init, dtype=np.float32).reshape(1, -1), requires_grad=True, name="z")
    xb = None if x is None else np.asarray(x, dtype=np.float32).reshape(1, -1)
    yb = np.asarray(y_target, dtype=np.float32).reshape(1, -1)
    opt = make_optimizer(method, [z], step_size)
    params = gen.parameters() if hasattr(gen, "parameters") else []
    traj = Trajectory([])
    for it in range(steps + 1):
        z.grad = None
        out = gen(xb, z)
        d = metric(out, yb)
        dist = float(d.data[0])
        if not np.isfinite(dist):
            traj.aborted = True
            break
        traj.steps.append(TraversalStep(z.data[0].copy(), out.data[0].copy(), dist))
        if it == steps:
            break
        d.backward()
        for p in params:
            p.grad = None
        if not np.all(np.isfinite(z.grad)):
            traj.aborted = True
            break
        opt.step()
    return traj
