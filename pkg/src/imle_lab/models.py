"""Two-branch generators over dense layers.

The backbone is a chain of residual-in-residual dense blocks (RRDBs). After
each RRDB a mapping network driven by the latent code rescales and shifts
every feature channel. The latent code is also concatenated to the input.
A :class:`ProgressiveGenerator` chains several generators, each doubling the
resolution per side of its predecessor.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Minimal parameter container; subclasses register children and leaf params."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            full = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield full, val
            elif isinstance(val, Module):
                yield from val.named_parameters(full + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.asarray(state[name], dtype=p.dtype).copy()

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _param(arr: np.ndarray, name: str) -> Tensor:
    return Tensor(arr.astype(np.float32), requires_grad=True, name=name)


class WNLinear(Module):
    """Weight-normalized dense layer: y = x @ (g * v / ||v||).T + b."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, gain: float = 1.0):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.v = _param(rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(out_dim, in_dim)), "v")
        self.g = _param(np.full(out_dim, gain), "g")
        self.b = _param(np.zeros(out_dim), "b")

    def weight(self) -> Tensor:
        return T.weight_norm(self.v, self.g)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise T.ShapeError(f"WNLinear expects {self.in_dim} input features, got {x.shape[-1]}")
        return weight_norm_linear(self.v, self.g, x, self.b)


def weight_norm_linear(v: Tensor, g: Tensor, x: Tensor, bias: Tensor | None = None) -> Tensor:
    out = T.matmul(x, T.transpose(T.weight_norm(v, g)))
    return out if bias is None else out + bias


class DenseBlock(Module):
    """Densely connected layers; the last maps back to ``width`` and is added with factor beta."""

    def __init__(self, width: int, growth: int, n_layers: int, beta: float, rng):
        if n_layers < 1:
            raise ValueError("a dense block needs at least one layer")
        self.beta = beta
        self.layers = []
        in_dim = width
        for k in range(n_layers):
            out_dim = width if k == n_layers - 1 else growth
            self.layers.append(WNLinear(in_dim, out_dim, rng))
            in_dim += growth

    def __call__(self, h: Tensor) -> Tensor:
        feats = [h]
        for layer in self.layers[:-1]:
            inp = feats[0] if len(feats) == 1 else T.concat(feats, axis=-1)
            feats.append(T.leaky_relu(layer(inp)))
        inp = feats[0] if len(feats) == 1 else T.concat(feats, axis=-1)
        return h + self.beta * self.layers[-1](inp)


class RRDBlock(Module):
    def __init__(self, width: int, growth: int, n_layers: int, beta: float, rng):
        self.beta = beta
        self.blocks = [DenseBlock(width, growth, n_layers, beta, rng) for _ in range(3)]

    def __call__(self, h: Tensor) -> Tensor:
        out = h
        for block in self.blocks:
            out = block(out)
        return h + self.beta * out


class MappingNetwork(Module):
    """MLP from the latent code to per-RRDB, per-channel (scale, offset) pairs."""

    def __init__(self, latent_dim: int, width: int, n_rrdb: int, hidden: int, n_layers: int,
                 out_gain: float, rng):
        if n_layers < 1:
            raise ValueError("mapping network needs at least one layer")
        self.width, self.n_rrdb = width, n_rrdb
        dims = [latent_dim] + [hidden] * (n_layers - 1)
        self.hidden = [WNLinear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.out = WNLinear(dims[-1], 2 * width * n_rrdb, rng, gain=out_gain)

    def __call__(self, z: Tensor) -> list[tuple[Tensor, Tensor]]:
        h = z
        for layer in self.hidden:
            h = T.leaky_relu(layer(h))
        raw = self.out(h)
        pairs = []
        w = self.width
        for k in range(self.n_rrdb):
            base = 2 * w * k
            scale = raw[:, base:base + w] + 1.0
            offset = raw[:, base + w:base + 2 * w]
            pairs.append((scale, offset))
        return pairs


@dataclass
class GeneratorConfig:
    input_dim: int
    output_dim: int
    latent_dim: int = 16
    width: int = 128
    growth: int = 32
    n_rrdb: int = 2
    dense_layers: int = 3
    beta: float = 0.2
    mapping_layers: int = 3
    mapping_width: int = 128
    modulation_gain: float = 0.1

    def __post_init__(self):
        if self.input_dim < 0 or self.output_dim < 1 or self.latent_dim < 1:
            raise ValueError(f"bad generator dims: {self}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class Generator(Module):
    """Implicit model T(x, z). ``x`` may be omitted when ``input_dim == 0``."""

    def __init__(self, config: GeneratorConfig, rng: np.random.Generator):
        self.config = config
        c = config
        self.head_in = WNLinear(c.input_dim + c.latent_dim, c.width, rng)
        self.rrdbs = [RRDBlock(c.width, c.growth, c.dense_layers, c.beta, rng) for _ in range(c.n_rrdb)]
        self.mapping = MappingNetwork(c.latent_dim, c.width, c.n_rrdb, c.mapping_width,
                                      c.mapping_layers, c.modulation_gain, rng)
        self.head_out = WNLinear(c.width, c.output_dim, rng)

    @property
    def input_dim(self) -> int:
        return self.config.input_dim

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    @property
    def output_dim(self) -> int:
        return self.config.output_dim

    def _inputs(self, x, z) -> tuple[Tensor | None, Tensor]:
        z = T.as_tensor(z)
        if z.ndim == 1:
            z = z.reshape(1, -1)
        if z.shape[-1] != self.latent_dim:
            raise T.ShapeError(f"latent code has {z.shape[-1]} dims, generator expects {self.latent_dim}")
        if self.input_dim == 0:
            if x is not None and np.size(x.data if isinstance(x, Tensor) else x) != 0:
                raise T.ShapeError("unconditional generator got a condition input")
            return None, z
        if x is None:
            raise T.ShapeError(f"generator expects a {self.input_dim}-dim condition input")
        x = T.as_tensor(x, dtype=z.dtype)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[-1] != self.input_dim:
            raise T.ShapeError(f"condition has {x.shape[-1]} dims, generator expects {self.input_dim}")
        if x.shape[0] != z.shape[0]:
            raise T.ShapeError(f"batch mismatch: {x.shape[0]} conditions vs {z.shape[0]} codes")
        return x, z

    def backbone(self, h: Tensor, z: Tensor, skip_rrdb: bool = False) -> Tensor:
        for rrdb, (scale, offset) in zip(self.rrdbs, self.mapping(z)):
            if not skip_rrdb:
                h = rrdb(h)
            h = T.scale_offset(h, scale, offset)
        return h

    def __call__(self, x, z, skip_rrdb: bool = False) -> Tensor:
        x, z = self._inputs(x, z)
        inp = z if x is None else T.concat([x, z], axis=-1)
        h = self.head_in(inp)
        h = self.backbone(h, z, skip_rrdb=skip_rrdb)
        return self.head_out(h)


def generate(gen: Generator, x, z) -> Tensor:
    return gen(x, z)


class ProgressiveGenerator(Module):
    """Chain of generators; stage s consumes stage s-1's output (or x) plus its own code."""

    def __init__(self, stages: Sequence[Generator]):
        if not stages:
            raise ValueError("a progressive generator needs at least one stage")
        for prev, nxt in zip(stages[:-1], stages[1:]):
            if nxt.input_dim != prev.output_dim:
                raise T.ShapeError(
                    f"stage input dim {nxt.input_dim} != previous stage output dim {prev.output_dim}"
                )
        self.stages = list(stages)

    @classmethod
    def build(cls, input_side: int, n_stages: int, rng, **overrides) -> "ProgressiveGenerator":
        """Stages upscale a square image by 2 per side, e.g. 7x7 -> 14x14 -> 28x28."""
        stages = []
        side = input_side
        for _ in range(n_stages):
            cfg = GeneratorConfig(input_dim=side * side, output_dim=(2 * side) ** 2, **overrides)
            stages.append(Generator(cfg, rng))
            side *= 2
        return cls(stages)

    @property
    def latent_dims(self) -> list[int]:
        return [s.latent_dim for s in self.stages]

    @property
    def output_dims(self) -> list[int]:
        return [s.output_dim for s in self.stages]

    def __call__(self, x, z_list: Sequence) -> list[Tensor]:
        return generate_progressive(self, x, z_list)

    def config_dict(self) -> dict:
        return {"stages": [s.config.to_dict() for s in self.stages]}


def generate_progressive(pg: ProgressiveGenerator, x, z_list: Sequence) -> list[Tensor]:
    if len(z_list) != len(pg.stages):
        raise ValueError(f"got {len(z_list)} latent codes for {len(pg.stages)} stages")
    outputs = []
    h = x
    for stage, z in zip(pg.stages, z_list):
        h = stage(h, z)
        outputs.append(h)
    return outputs


def sample_latent(dim: int, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
    """i.i.d. standard normal code(s) as float32; shape (dim,) or (count, dim)."""
    if dim < 1:
        raise ValueError(f"latent dim must be >= 1, got {dim}")
    shape = (dim,) if count is None else (count, dim)
    return rng.standard_normal(shape).astype(np.float32)


def save_model_config(model, path) -> None:
    if isinstance(model, ProgressiveGenerator):
        payload = {"kind": "progressive", **model.config_dict()}
    else:
        payload = {"kind": "generator", "config": model.config.to_dict()}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def model_from_config(payload: dict, rng) -> Module:
    if payload["kind"] == "progressive":
        return ProgressiveGenerator([Generator(GeneratorConfig(**c), rng) for c in payload["stages"]])
    return Generator(GeneratorConfig(**payload["config"]), rng)
