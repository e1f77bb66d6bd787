"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, index: tuple, h: float = 1e-5) -> float:
    old = t.data[index]
    t.data[index] = old + h
    up = fn().item()
    t.data[index] = old - h
    down = fn().item()
    t.data[index] = old
    return (up - down) / (2 * h)


def gradcheck(fn: Callable[[], Tensor], params: Sequence[Tensor], n_points: int = 10,
              h: float = 1e-5, rng: np.random.Generator | None = None,
              atol: float = 1e-8) -> float:
    """Return the worst relative error between tape and finite-difference gradients.

    ``fn`` must rebuild the scalar loss from the current parameter values.
    ``n_points`` coordinates are sampled uniformly over all parameters.
    The relative error is |a-n| / max(|a|, |n|, atol).
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    sizes = np.array([p.data.size for p in params])
    worst = 0.0
    for _ in range(n_points):
        k = rng.choice(len(params), p=sizes / sizes.sum())
        flat = int(rng.integers(params[k].data.size))
        idx = np.unravel_index(flat, params[k].data.shape)
        num = numeric_grad(fn, params[k], idx, h)
        ana = analytic[k][idx]
        err = abs(ana - num) / max(abs(ana), abs(num), atol)
        worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
