"""Parameter containers built on the autodiff core."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat, leaky_relu, sigmoid, slice_cols, tanh
from .errors import ShapeError


class Module:
    """Collects parameters from attributes, lists, and nested modules."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            _collect(out, f"{prefix}{key}", val)
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def _collect(out: dict, name: str, val) -> None:
    if isinstance(val, Tensor):
        if val.requires_grad:
            out[name] = val
    elif isinstance(val, Module):
        out.update(val.named_parameters(prefix=name + "."))
    elif isinstance(val, (list, tuple)):
        for i, item in enumerate(val):
            _collect(out, f"{name}.{i}", item)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.n_in, self.n_out = n_in, n_out
        self.weight = Tensor(glorot(rng, n_in, n_out), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"Linear expects width {self.n_in}, got input {x.shape}")
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class MLP(Module):
    """Two affine maps with a leaky ReLU in between."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator,
                 alpha: float = 0.2):
        self.first = Linear(n_in, n_hidden, rng)
        self.second = Linear(n_hidden, n_out, rng)
        self.alpha = alpha

    @property
    def n_in(self) -> int:
        return self.first.n_in

    def __call__(self, x: Tensor) -> Tensor:
        return self.second(leaky_relu(self.first(x), self.alpha))


class LSTMCell(Module):
    """Standard LSTM cell; gates ordered (input, forget, cell, output)."""

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator):
        self.n_hidden = n_hidden
        self.w_input = Tensor(glorot(rng, n_in, 4 * n_hidden), requires_grad=True)
        self.w_hidden = Tensor(glorot(rng, n_hidden, 4 * n_hidden), requires_grad=True)
        b = np.zeros(4 * n_hidden)
        b[n_hidden:2 * n_hidden] = 1.0  # forget-gate bias
        self.bias = Tensor(b, requires_grad=True)

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        gates = x @ self.w_input + h @ self.w_hidden + self.bias
        n = self.n_hidden
        i = sigmoid(slice_cols(gates, 0, n))
        f = sigmoid(slice_cols(gates, n, 2 * n))
        g = tanh(slice_cols(gates, 2 * n, 3 * n))
        o = sigmoid(slice_cols(gates, 3 * n, 4 * n))
        c_new = f * c + i * g
        return o * tanh(c_new), c_new


def hstack(xs) -> Tensor:
    return concat(xs, axis=1)
