"""Small non-saturating GAN used as the mode-coverage baseline."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .imle import NonFiniteLossError, rng_streams
from .models import Generator, Module, WNLinear, sample_latent
from .optim import Adam
from .tensor import Tensor


class Discriminator(Module):
    """Dense MLP producing one logit per row."""

    def __init__(self, in_dim: int, hidden: int = 128, n_hidden: int = 2, rng=None):
        rng = rng or np.random.default_rng(0)
        dims = [in_dim] + [hidden] * n_hidden
        self.layers = [WNLinear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.out = WNLinear(dims[-1], 1, rng)

    def __call__(self, y, x=None) -> Tensor:
        h = T.as_tensor(y)
        if x is not None:
            h = T.concat([T.as_tensor(x, dtype=h.dtype), h], axis=-1)
        for layer in self.layers:
            h = T.leaky_relu(layer(h))
        return self.out(h).reshape(-1)


def losses_from_logits(real_logits: Tensor, fake_logits: Tensor) -> tuple[Tensor, Tensor]:
    """loss_D = -mean log s(D(real)) - mean log(1 - s(D(fake))); loss_G = -mean log s(D(fake))."""
    # -log s(a) = softplus(-a);  -log(1 - s(a)) = softplus(a)
    loss_d = T.mean(T.softplus(-real_logits)) + T.mean(T.softplus(fake_logits))
    loss_g = T.mean(T.softplus(-fake_logits))
    return loss_d, loss_g


def gan_losses(disc: Discriminator, gen: Generator, real, codes, x=None) -> tuple[Tensor, Tensor]:
    real = np.asarray(real, dtype=np.float32)
    if len(real) == 0:
        raise ValueError("empty real batch")
    fake = gen(x, codes)
    return losses_from_logits(disc(real, x), disc(fake, x))


@dataclass
class GANConfig:
    iterations: int = 5000
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    log_every: int = 100
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GANResult:
    history: list[dict] = field(default_factory=list)


def train_gan(gen: Generator, disc: Discriminator, data, cfg: GANConfig,
              evaluate: Callable[[Generator, int], dict] | None = None,
              inputs=None) -> GANResult:
    """Alternate one discriminator and one generator step per iteration.

    Every ``log_every`` iterations a row with the current losses, and whatever
    ``evaluate(gen, iteration)`` returns, is appended to the history.
    """
    data = np.asarray(data, dtype=np.float32)
    inputs = None if inputs is None else np.asarray(inputs, dtype=np.float32)
    streams = rng_streams(cfg.seed)
    rng_batch, rng_codes = streams["batch"], streams["gan"]
    opt_g = Adam(gen.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    opt_d = Adam(disc.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    result = GANResult()
    t0 = time.perf_counter()
    for it in range(1, cfg.iterations + 1):
        idx = rng_batch.choice(len(data), size=cfg.batch_size, replace=False)
        real = data[idx]
        x = None if inputs is None else inputs[idx]

        codes = sample_latent(gen.latent_dim, rng_codes, cfg.batch_size)
        with T.no_grad():
            fake = gen(x, codes).data
        opt_d.zero_grad()
        loss_d, _ = losses_from_logits(disc(real, x), disc(fake, x))
        loss_d.backward()
        opt_d.step()

        codes = sample_latent(gen.latent_dim, rng_codes, cfg.batch_size)
        opt_g.zero_grad()
        loss_g = T.mean(T.softplus(-disc(gen(x, codes), x)))
        loss_g.backward()
        opt_g.step()
        disc.zero_grad()

        ld, lg = loss_d.item(), loss_g.item()
        if not (np.isfinite(ld) and np.isfinite(lg)):
            raise NonFiniteLossError(f"non-finite GAN loss at iteration {it} (D={ld}, G={lg})")
        if cfg.log_every and it % cfg.log_every == 0:
            row = {"iteration": it, "loss_d": ld, "loss_g": lg}
            if evaluate is not None:
                row.update(evaluate(gen, it))
            row["wall_time_ms"] = (time.perf_counter() - t0) * 1e3
            result.history.append(row)
    return result
