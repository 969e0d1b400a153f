"""Central finite-difference checks for the autodiff engine."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def numerical_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        grad.reshape(-1)[i] = (fp - fm) / (2 * h)
    return grad


def check_grads(build: Callable[[Sequence[Tensor]], Tensor], arrays: Sequence[np.ndarray],
                h: float = 1e-3) -> float:
    """Max relative error between analytic and numerical grads of ``sum(build(tensors))``.

    Arrays are promoted to float64 so the finite differences are not swamped
    by rounding.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    out = build(leaves)
    loss = out if out.data.size == 1 else out.sum()
    loss.backward()

    def f():
        with_values = [Tensor(a, dtype=np.float64) for a in arrays]
        return float(np.sum(build(with_values).data))

    worst = 0.0
    for leaf, arr in zip(leaves, arrays):
        num = numerical_grad(f, arr, h)
        ana = leaf.grad if leaf.grad is not None else np.zeros_like(arr)
        worst = max(worst, rel_error(ana, num))
    return worst


def directional_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], rng: np.random.Generator,
                      h: float = 1e-3) -> float:
    """Compare <grad, v> with (f(p + h v) - f(p - h v)) / 2h for a random unit direction v."""
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    dirs = [rng.standard_normal(p.shape) for p in params]
    norm = np.sqrt(sum(float(np.sum(d * d)) for d in dirs))
    dirs = [d / norm for d in dirs]
    analytic = sum(float(np.sum(p.grad * d)) for p, d in zip(params, dirs) if p.grad is not None)
    originals = [p.data.copy() for p in params]

    def shifted(sign):
        for p, o, d in zip(params, originals, dirs):
            p.data = (o + sign * h * d).astype(o.dtype)
        value = float(loss_fn().data.sum())
        for p, o in zip(params, originals):
            p.data = o.copy()
        return value

    numeric = (shifted(+1) - shifted(-1)) / (2 * h)
    scale = max(abs(analytic), abs(numeric))
    return 0.0 if scale == 0 else abs(analytic - numeric) / scale
