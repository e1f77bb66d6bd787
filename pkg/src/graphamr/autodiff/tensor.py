"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are only recorded while a :class:`Tape` is active::

    w = Tensor(np.zeros((3, 2)), requires_grad=True)
    with Tape() as tape:
        loss = (x @ w).sum()
    tape.backward(loss)
    w.grad  # d(loss)/dw

Outside a tape every operation is a plain numpy computation, which keeps
inference free of bookkeeping.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from ..errors import ContractError, DomainError, ShapeError

_TAPES: list["Tape"] = []


def _active_tape() -> "Tape | None":
    return _TAPES[-1] if _TAPES else None


class Tensor:
    """A row-major float64 array with an optional gradient accumulator."""

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, copy=True)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._retain = False

    # -- bookkeeping -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def retain_grad(self) -> "Tensor":
        """Keep the gradient of a non-leaf tensor after backward."""
        self._retain = True
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index_rows(self, idx)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return reduce(self, "sum", axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce(self, "mean", axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered log of differentiable operations.

    Records are appended as operations execute, so the log is already in
    topological order; :meth:`backward` walks it once in reverse.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._outputs: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self.records.append(_Record(out, inputs, backward))
        self._outputs.add(id(out))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._outputs and not loss.requires_grad:
            raise ContractError("loss is neither recorded on this tape nor a tracked leaf")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        seen: dict[int, Tensor] = {id(loss): loss}
        for rec in reversed(self.records):
            g = grads.get(id(rec.out))
            if g is None:
                continue
            if not rec.out._retain:
                del grads[id(rec.out)]
            parts = rec.backward(g)
            for inp, gi in zip(rec.inputs, parts):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    seen[key] = inp
        for key, g in grads.items():
            t = seen[key]
            if key in self._outputs and not t._retain:
                continue
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += g.reshape(t.data.shape)


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


# ---------------------------------------------------------------------------
# helpers


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = track
    out.grad = None
    out.name = None
    out._retain = False
    if track:
        tape.record(out, tuple(inputs), backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


def _seg_add(values: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    """Row-bucketed sum via a sparse indicator matrix (fixed summation order)."""
    rows = seg.shape[0]
    if rows == 0:
        return np.zeros((n,) + values.shape[1:])
    ind = sparse.csr_matrix((np.ones(rows), (seg, np.arange(rows))), shape=(n, rows))
    return np.asarray(ind @ values.reshape(rows, -1)).reshape((n,) + values.shape[1:])


def _seg_max(values: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    out = np.full((n,) + values.shape[1:], -np.inf)
    if seg.shape[0] == 0:
        return out
    order = np.argsort(seg, kind="stable")
    s = seg[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    out[s[starts]] = np.maximum.reduceat(values[order], starts, axis=0)
    return out


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    need_a, need_b = a.requires_grad, b.requires_grad
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape) if need_a else None,
                            _unbroadcast(g * ad, bd.shape) if need_b else None))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape),
                            _unbroadcast(-g * out / bd, bd.shape)))


def power(a: Tensor, exponent: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(ad ** exponent, (a,), lambda g: (g * exponent * ad ** (exponent - 1),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    need_a, need_b = a.requires_grad, b.requires_grad
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T if need_a else None,
                                             ad.T @ g if need_b else None))


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    x = as_tensor(x)
    slope = np.where(x.data > 0, 1.0, alpha)
    return _make(x.data * slope, (x,), lambda g: (g * slope,))


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    neg = alpha * np.expm1(np.minimum(x.data, 0.0))
    out = np.where(x.data > 0, x.data, neg)
    d = np.where(x.data > 0, 1.0, neg + alpha)
    return _make(out, (x,), lambda g: (g * d,))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log of non-positive value")
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def clip(x: Tensor, lo: float, hi: float = np.inf) -> Tensor:
    """Clamp values; gradient passes only where the input was inside [lo, hi]."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def activation(x: Tensor, kind: str, alpha: float = 0.2) -> Tensor:
    fns = {"leaky_relu": lambda t: leaky_relu(t, alpha), "sigmoid": sigmoid, "tanh": tanh,
           "exp": exp, "log": log, "elu": elu, "relu": relu}
    if kind not in fns:
        raise ContractError(f"unknown activation {kind!r}")
    return fns[kind](x)


# ---------------------------------------------------------------------------
# softmax


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax; entries where ``mask`` is False come out exactly 0."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-d tensor, got {x.shape}")
    logits = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != logits.shape:
            raise ShapeError(f"mask shape {mask.shape} does not match {logits.shape}")
        if not mask.any(axis=1).all():
            raise ContractError("softmax_rows: fully masked (degenerate) row")
        logits = np.where(mask, logits, -np.inf)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _make(out, (x,), bw)


def segment_softmax(x: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    """Softmax over the rows of ``x`` that share a segment id (per trailing column)."""
    x = as_tensor(x)
    seg = np.asarray(segments)
    if x.ndim < 1 or seg.ndim != 1 or seg.shape[0] != x.shape[0]:
        raise ShapeError(f"segment_softmax: values {x.shape} vs segments {seg.shape}")
    tail = x.shape[1:]
    top = _seg_max(x.data, seg, n_segments)
    e = np.exp(x.data - top[seg])
    out = e / _seg_add(e, seg, n_segments)[seg]

    def bw(g):
        dot = _seg_add(g * out, seg, n_segments)
        return (out * (g - dot[seg]),)

    return _make(out, (x,), bw)


# ---------------------------------------------------------------------------
# shape manipulation and reductions


def reduce(x: Tensor, kind: str = "sum", axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if kind not in ("sum", "mean"):
        raise ContractError(f"unknown reduction {kind!r}")
    shape = x.shape
    if axis is None:
        count = x.data.size
        val = x.data.sum()
        out = np.asarray(val / count if kind == "mean" else val)
        if keepdims:
            out = out.reshape((1,) * x.ndim)

        def bw(g):
            g0 = float(np.asarray(g).reshape(-1)[0])
            return (np.full(shape, g0 / count if kind == "mean" else g0),)

        return _make(out, (x,), bw)
    ax = _check_axis(axis, x.ndim)
    count = shape[ax]
    out = x.data.sum(axis=ax, keepdims=keepdims)
    if kind == "mean":
        out = out / count

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        g = np.broadcast_to(g, shape)
        return ((g / count if kind == "mean" else g).copy(),)

    return _make(out, (x,), bw)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    if not xs:
        raise ContractError("concat of an empty list")
    ax = _check_axis(axis, xs[0].ndim)
    for t in xs[1:]:
        if t.ndim != xs[0].ndim or any(
                a != b for i, (a, b) in enumerate(zip(t.shape, xs[0].shape)) if i != ax):
            raise ShapeError(f"concat shape mismatch: {xs[0].shape} vs {t.shape} on axis {ax}")
    cuts = np.cumsum([t.shape[ax] for t in xs])[:-1]
    out = np.concatenate([t.data for t in xs], axis=ax)
    return _make(out, xs, lambda g: tuple(np.split(g, cuts, axis=ax)))


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a 2-d tensor, got {x.shape}")
    return _make(x.data.T.copy(), (x,), lambda g: (g.T,))


def index_rows(x: Tensor, idx) -> Tensor:
    """Gather ``x[idx]`` along the first axis (repeated indices allowed)."""
    x = as_tensor(x)
    shape = x.shape
    out = x.data[idx]

    def bw(g):
        if isinstance(idx, np.ndarray) and idx.ndim == 1 and idx.dtype.kind in "iu":
            return (_seg_add(g, idx % shape[0], shape[0]),)
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out, (x,), bw)


def segment_sum(x: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``n_segments`` buckets: out[s] = sum of x[i] with seg[i]=s."""
    x = as_tensor(x)
    seg = np.asarray(segments)
    if seg.shape[0] != x.shape[0]:
        raise ShapeError(f"segment_sum: {x.shape[0]} rows but {seg.shape[0]} segment ids")
    return _make(_seg_add(x.data, seg, n_segments), (x,), lambda g: (g[seg],))


def detach(x: Tensor) -> Tensor:
    return Tensor(as_tensor(x).data)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of a 2-d tensor."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"slice_cols expects a 2-d tensor, got {x.shape}")
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _make(np.ascontiguousarray(x.data[:, start:stop]), (x,), bw)


# ---------------------------------------------------------------------------
# fused multi-head edge attention


def _pair_matrix(values: np.ndarray, src: np.ndarray, dst: np.ndarray, n: int) -> sparse.csr_matrix:
    """n x n matrix with ``values`` at (dst, src); built directly when dst is sorted."""
    if dst.size and (np.diff(dst) >= 0).all():
        indptr = np.concatenate([[0], np.cumsum(np.bincount(dst, minlength=n))])
        return sparse.csr_matrix((values, src, indptr), shape=(n, n))
    return sparse.csr_matrix((values, (dst, src)), shape=(n, n))


def _check_pairs(x: Tensor, src, dst, n: int) -> tuple[np.ndarray, np.ndarray]:
    src, dst = np.asarray(src), np.asarray(dst)
    if x.ndim != 3 or x.shape[0] != n:
        raise ShapeError(f"expected an n x heads x width tensor with n={n}, got {x.shape}")
    if src.shape != dst.shape or src.ndim != 1:
        raise ShapeError("src and dst must be equal-length index vectors")
    return src, dst


def edge_softmax_dot(x: Tensor, src, dst, n: int, alpha: float = 0.2) -> Tensor:
    """Per-head attention over pairs: a[e, h] = softmax over pairs sharing dst
    of leaky_relu(<x[dst, h], x[src, h]>). Every dst needs at least one pair."""
    x = as_tensor(x)
    src, dst = _check_pairs(x, src, dst, n)
    xd = x.data
    s = np.einsum("ehl,ehl->eh", xd[dst], xd[src])
    slope = np.where(s > 0, 1.0, alpha)
    e = s * slope
    top = _seg_max(e, dst, n)
    ex = np.exp(e - top[dst])
    out = ex / _seg_add(ex, dst, n)[dst]

    def bw(g):
        ge = out * (g - _seg_add(g * out, dst, n)[dst])
        gs = ge * slope
        gx = np.empty_like(xd)
        for h in range(xd.shape[1]):
            S = _pair_matrix(gs[:, h], src, dst, n)
            gx[:, h] = S @ xd[:, h] + S.T @ xd[:, h]
        return (gx,)

    return _make(out, (x,), bw)


def edge_aggregate(a: Tensor, x: Tensor, src, dst, n: int) -> Tensor:
    """out[i, h] = sum over pairs e with dst[e] = i of a[e, h] * x[src[e], h]."""
    a, x = as_tensor(a), as_tensor(x)
    src, dst = _check_pairs(x, src, dst, n)
    if a.shape != (src.shape[0], x.shape[1]):
        raise ShapeError(f"pair weights {a.shape} do not match {src.shape[0]} pairs x {x.shape[1]} heads")
    ad, xd = a.data, x.data
    mats = [_pair_matrix(ad[:, h], src, dst, n) for h in range(xd.shape[1])]
    out = np.stack([mats[h] @ xd[:, h] for h in range(xd.shape[1])], axis=1)

    def bw(g):
        ga = np.einsum("ehl,ehl->eh", g[dst], xd[src]) if a.requires_grad else None
        gx = np.stack([mats[h].T @ g[:, h] for h in range(xd.shape[1])], axis=1) if x.requires_grad else None
        return ga, gx

    return _make(out, (a, x), bw)


def _leaky_inplace(e: np.ndarray, alpha: float) -> None:
    if 0.0 <= alpha <= 1.0:
        np.maximum(e, alpha * e, out=e)
    else:
        e[e < 0] *= alpha


def dense_softmax_dot(x: Tensor, alpha: float = 0.2) -> Tensor:
    """All-pairs attention: a[h, i, j] = softmax over j of leaky_relu(<x[i, h], x[j, h]>).

    Only the m x n x n result is kept for backward; the leaky slopes are
    recomputed, so memory stays at one n x n array per head.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"dense attention expects n x heads x width, got {x.shape}")
    xd = x.data
    n, m, _ = xd.shape
    out = np.empty((m, n, n))
    for h in range(m):
        e = out[h]
        np.matmul(xd[:, h], xd[:, h].T, out=e)
        _leaky_inplace(e, alpha)
        e -= e.max(axis=1, keepdims=True)
        np.exp(e, out=e)
        e /= e.sum(axis=1, keepdims=True)

    def bw(g):
        gx = np.empty_like(xd)
        for h in range(m):
            a = out[h]
            ge = g[h] * a
            row = ge.sum(axis=1, keepdims=True)
            ge -= a * row
            s = xd[:, h] @ xd[:, h].T
            np.multiply(ge, alpha, out=ge, where=s <= 0)
            gx[:, h] = ge @ xd[:, h] + ge.T @ xd[:, h]
        return (gx,)

    return _make(out, (x,), bw)


def dense_aggregate(a: Tensor, x: Tensor) -> Tensor:
    """out[i, h] = sum_j a[h, i, j] * x[j, h]."""
    a, x = as_tensor(a), as_tensor(x)
    if x.ndim != 3 or a.shape != (x.shape[1], x.shape[0], x.shape[0]):
        raise ShapeError(f"dense weights {a.shape} do not match features {x.shape}")
    ad, xd = a.data, x.data
    out = np.stack([ad[h] @ xd[:, h] for h in range(xd.shape[1])], axis=1)

    def bw(g):
        ga = np.stack([g[:, h] @ xd[:, h].T for h in range(xd.shape[1])]) if a.requires_grad else None
        gx = np.stack([ad[h].T @ g[:, h] for h in range(xd.shape[1])], axis=1) if x.requires_grad else None
        return ga, gx

    return _make(out, (a, x), bw)
