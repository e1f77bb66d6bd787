"""Adam optimizer over named parameter tensors."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def _named(params) -> list[tuple[str, Tensor]]:
    if isinstance(params, Mapping):
        return list(params.items())
    return [(str(i), p) for i, p in enumerate(params)]


def adam_step(params: Mapping[str, Tensor] | Iterable[Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update, then zero the gradients."""
    named = _named(params)
    if not state.m:
        for name, p in named:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
    if set(state.m) != {name for name, _ in named}:
        raise ContractError("Adam state does not match the parameter set")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in named:
        m, v = state.m[name], state.v[name]
        if m.shape != p.data.shape:
            raise ContractError(f"Adam state for {name!r} has shape {m.shape}, parameter {p.data.shape}")
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.zero_grad()


class Adam:
    """Thin stateful wrapper so training loops can call ``opt.step()``."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self) -> None:
        adam_step(self.params, self.state)

    def zero_grad(self) -> None:
        for _, p in _named(self.params):
            p.zero_grad()
