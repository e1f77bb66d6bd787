"""Sample-graph learning: multi-head GAT, attention transition matrix, label propagation.

The GAT attention of one layer doubles as the transition matrix P of label
propagation, so the propagation itself is trainable. Training hides a random
part of the labels from the propagation input and scores only those nodes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

from .autodiff import (
    Tensor,
    clip,
    dense_aggregate,
    dense_softmax_dot,
    edge_aggregate,
    edge_softmax_dot,
    elu,
    leaky_relu,
    log,
    reshape,
    softmax_rows,
)
from .errors import ConnectivityError, ContractError, InvariantError, ShapeError
from .knn import SampleGraph
from .nn import MLP, Linear, Module, glorot

N_CLASSES = 11
ROW_TOL = 1e-10


# ---------------------------------------------------------------------------
# attention support


@dataclass
class Support:
    """Neighbourhoods the attention runs over.

    Sparse: pair (src[e], dst[e]) means dst attends to src; every node has a
    self pair. Dense: every node attends to every node.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    dense: bool = False

    @classmethod
    def from_graph(cls, graph: SampleGraph) -> "Support":
        if graph.complete:
            empty = np.empty(0, dtype=np.int64)
            return cls(graph.n, empty, empty, dense=True)
        src, dst = graph.neighbourhoods()
        return cls(graph.n, src, dst)

    @classmethod
    def from_pairs(cls, n: int, src, dst) -> "Support":
        """Arbitrary (src, dst) pairs; self-loops are added, duplicates dropped."""
        s = np.concatenate([np.asarray(src, dtype=np.int64), np.arange(n)])
        t = np.concatenate([np.asarray(dst, dtype=np.int64), np.arange(n)])
        key = np.unique(t * n + s)
        return cls(n, key % n, key // n)

    @property
    def n_pairs(self) -> int:
        return self.n * self.n if self.dense else len(self.src)

    def to_dense(self, values: np.ndarray) -> np.ndarray:
        if self.dense:
            return np.asarray(values)
        M = np.zeros((self.n, self.n))
        M[self.dst, self.src] = values
        return M


# ---------------------------------------------------------------------------
# GAT


class GatLayer(Module):
    """Multi-head dot-product graph attention.

    Per head h: e_ij = leaky_relu(<W_h x_i, W_h x_j>) over j in N(i),
    a_ij = softmax_j(e_ij), x'_i = elu(sum_j a_ij W_h x_j). Head outputs and
    head attentions are averaged.
    """

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, heads: int = 4,
                 alpha: float = 0.2):
        self.n_in, self.n_out, self.heads, self.alpha = n_in, n_out, heads, alpha
        self.weight = Tensor(np.concatenate([glorot(rng, n_in, n_out) for _ in range(heads)], axis=1),
                             requires_grad=True)

    def __call__(self, x: Tensor, support: Support, trace: list | None = None
                 ) -> tuple[Tensor, Tensor]:
        """Return (features n x n_out, head-averaged attention E')."""
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"GAT layer expects width {self.n_in}, got {x.shape}")
        if x.shape[0] != support.n:
            raise ShapeError(f"{x.shape[0]} feature rows for a {support.n}-node graph")
        wx = x @ self.weight
        if support.dense:
            return self._dense(wx, trace)
        m, L = self.heads, self.n_out
        n = support.n
        w3 = reshape(wx, (n, m, L))
        a = edge_softmax_dot(w3, support.src, support.dst, n, self.alpha)  # E x m
        if trace is not None:
            trace.append(a.data.copy())
        out = elu(edge_aggregate(a, w3, support.src, support.dst, n))  # n x m x L
        return out.mean(axis=1), a.mean(axis=1)

    def _dense(self, wx: Tensor, trace) -> tuple[Tensor, Tensor]:
        n = wx.shape[0]
        w3 = reshape(wx, (n, self.heads, self.n_out))
        a = dense_softmax_dot(w3, self.alpha)  # m x n x n
        if trace is not None:
            trace.extend(a.data[h].copy() for h in range(self.heads))
        out = elu(dense_aggregate(a, w3))
        return out.mean(axis=1), a.mean(axis=0)


# ---------------------------------------------------------------------------
# transition matrix and label propagation (numpy reference implementations)


@dataclass
class TransitionMatrix:
    P: sparse.csr_matrix
    labeled: np.ndarray
    unlabeled: np.ndarray

    def _block(self, rows, cols):
        return self.P[rows][:, cols]

    @property
    def P_LL(self):
        return self._block(self.labeled, self.labeled)

    @property
    def P_LU(self):
        return self._block(self.labeled, self.unlabeled)

    @property
    def P_UL(self):
        return self._block(self.unlabeled, self.labeled)

    @property
    def P_UU(self):
        return self._block(self.unlabeled, self.unlabeled)


def check_row_stochastic(P, tol: float = ROW_TOL, what: str = "transition") -> None:
    M = sparse.csr_matrix(P) if not sparse.issparse(P) else P.tocsr()
    if M.data.size and M.data.min() < 0:
        raise InvariantError(f"{what} matrix has negative entries")
    sums = np.asarray(M.sum(axis=1)).ravel()
    bad = np.abs(sums - 1.0) > tol
    if bad.any():
        raise InvariantError(f"{what} rows do not sum to 1 (worst {np.abs(sums - 1).max():.3e})")


def build_transition(edge_weights: np.ndarray, support: Support, labeled) -> TransitionMatrix:
    """P_ij = E'_ij on the attention support; rows must already be stochastic."""
    w = np.asarray(edge_weights, dtype=np.float64)
    if support.dense:
        P = sparse.csr_matrix(w)
    else:
        P = sparse.csr_matrix((w, (support.dst, support.src)), shape=(support.n, support.n))
    check_row_stochastic(P)
    labeled = np.asarray(labeled, dtype=np.int64)
    unlabeled = np.setdiff1d(np.arange(support.n), labeled)
    return TransitionMatrix(P, labeled, unlabeled)


def smoothed_onehot(labels, n_classes: int = N_CLASSES, eps: float = 0.1) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    Y = np.full((len(labels), n_classes), eps / n_classes)
    Y[np.arange(len(labels)), labels] += 1.0 - eps
    return Y


def _as_csr(P) -> sparse.csr_matrix:
    return P.tocsr() if sparse.issparse(P) else sparse.csr_matrix(np.asarray(P, dtype=np.float64))


def lpa_iterate(P, F0: np.ndarray, labeled_rows, max_iters: int = 20,
                mode: str = "synchronous", tol: float = 1e-8, seed: int = 0) -> np.ndarray:
    """Propagate labels; labeled rows of ``F0`` stay clamped.

    Synchronous: f_U <- P_UU f_U + P_UL Y_L. Asynchronous: unlabeled nodes are
    updated one at a time in a seeded random order, each using the latest
    values of its neighbours.
    """
    M = _as_csr(P)
    try:
        check_row_stochastic(M)
    except InvariantError as exc:
        raise ContractError(str(exc)) from None
    if mode not in ("synchronous", "asynchronous"):
        raise ContractError(f"unknown LPA mode {mode!r}")
    F = np.array(F0, dtype=np.float64)
    n = F.shape[0]
    free = np.ones(n, dtype=bool)
    free[np.asarray(labeled_rows, dtype=np.int64)] = False
    unl = np.flatnonzero(free)
    if unl.size == 0:
        return F
    rng = np.random.default_rng(seed)
    P_U = M[unl]
    indptr, indices, data = M.indptr, M.indices, M.data
    for _ in range(max_iters):
        if mode == "synchronous":
            new = P_U @ F
            delta = np.abs(new - F[unl]).max()
            F[unl] = new
        else:
            delta = 0.0
            for i in rng.permutation(unl):
                lo, hi = indptr[i], indptr[i + 1]
                row = data[lo:hi] @ F[indices[lo:hi]]
                delta = max(delta, np.abs(row - F[i]).max())
                F[i] = row
        if delta < tol:
            break
    return F


def lpa_closed_form(P, Y_L: np.ndarray, labeled_rows) -> np.ndarray:
    """f_U = (I - P_UU)^-1 P_UL Y_L, rows ordered as the unlabeled indices ascending."""
    M = _as_csr(P)
    n = M.shape[0]
    lab = np.asarray(labeled_rows, dtype=np.int64)
    unl = np.setdiff1d(np.arange(n), lab)
    if unl.size == 0:
        return np.zeros((0, np.asarray(Y_L).shape[1]))
    # each unlabeled node must reach a labeled node along the support of P
    reach = np.zeros(n, dtype=bool)
    if lab.size:
        order = csgraph.breadth_first_order(_reverse_with_root(M, lab), n, directed=True,
                                            return_predecessors=False)
        reach[order[order < n]] = True
    if not reach[unl].all():
        raise ConnectivityError("unlabeled component with no labeled node")
    A = sparse.identity(unl.size, format="csc") - M[unl][:, unl].tocsc()
    b = M[unl][:, lab] @ np.asarray(Y_L, dtype=np.float64)
    try:
        out = spsolve(A, b)
    except RuntimeError as exc:  # pragma: no cover - singular despite reachability
        raise ConnectivityError(str(exc)) from None
    return np.asarray(out).reshape(unl.size, -1)


def _reverse_with_root(M: sparse.csr_matrix, lab: np.ndarray) -> sparse.csr_matrix:
    """Reversed support graph plus a virtual root (index n) pointing at labeled nodes."""
    n = M.shape[0]
    coo = M.tocoo()
    pos = coo.data > 0
    r = np.concatenate([coo.col[pos], np.full(lab.size, n)])
    c = np.concatenate([coo.row[pos], lab])
    return sparse.csr_matrix((np.ones(r.size), (r, c)), shape=(n + 1, n + 1))


# ---------------------------------------------------------------------------
# differentiable pieces used in training


def propagate(P: Tensor, support: Support, Y0: np.ndarray, clamp: np.ndarray,
              iters: int = 20, tol: float = 0.0) -> Tensor:
    """Synchronous label propagation on the tape.

    ``P`` holds per-pair weights (sparse support) or the n x n matrix
    (dense). Rows with ``clamp`` True are reset to ``Y0`` every step.
    """
    keep = clamp.astype(float)[:, None]
    fixed = Tensor(Y0 * keep)
    free = Tensor(1.0 - keep)
    F = Tensor(Y0)
    n, C = Y0.shape
    w = None if support.dense else reshape(P, (-1, 1))
    for _ in range(iters):
        if support.dense:
            prop = P @ F
        else:
            prop = reshape(edge_aggregate(w, reshape(F, (n, 1, C)), support.src, support.dst, n), (n, C))
        new = prop * free + fixed
        done = tol > 0 and np.abs(new.data - F.data).max() < tol
        F = new
        if done:
            break
    return F


def cross_entropy(F: Tensor, targets: np.ndarray, rows) -> Tensor:
    """Mean over ``rows`` of -sum_c t_c log f_c, with f clipped at 1e-12."""
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise ContractError("cross-entropy over an empty row set")
    picked = clip(F[rows], 1e-12)
    return -(Tensor(np.asarray(targets, dtype=np.float64)[rows]) * log(picked)).sum() * (1.0 / rows.size)


@dataclass
class MaskDraw:
    F0: np.ndarray  # n x C propagation input
    clamp: np.ndarray  # n bool, rows held fixed during propagation
    masked: np.ndarray  # indices scored by the loss


def apply_mask(labels: np.ndarray, labeled: np.ndarray, mask_rate: float, rng: np.random.Generator,
               n_classes: int = N_CLASSES, eps: float = 0.1) -> MaskDraw:
    """Hide ``round(mask_rate * |labeled|)`` labels from the propagation input.

    Hidden, unlabeled and held-out rows all start uniform and propagate
    freely; only the visible labeled rows are clamped.
    """
    if not 0.0 < mask_rate < 1.0:
        raise ContractError(f"mask_rate must lie in (0, 1), got {mask_rate}")
    labeled = np.asarray(labeled, dtype=np.int64)
    count = int(round(mask_rate * labeled.size))
    if count == 0 or count == labeled.size:
        raise ContractError(f"mask of {count} out of {labeled.size} labeled nodes is degenerate")
    masked = np.sort(rng.choice(labeled, size=count, replace=False))
    visible = np.setdiff1d(labeled, masked)
    n = len(labels)
    F0 = np.full((n, n_classes), 1.0 / n_classes)
    F0[visible] = smoothed_onehot(np.asarray(labels)[visible], n_classes, eps)
    clamp = np.zeros(n, dtype=bool)
    clamp[visible] = True
    return MaskDraw(F0, clamp, masked)


def visible_input(labels: np.ndarray, labeled: np.ndarray, n_classes: int = N_CLASSES,
                  eps: float = 0.1) -> MaskDraw:
    """Propagation input at evaluation time: every training label visible."""
    labeled = np.asarray(labeled, dtype=np.int64)
    n = len(labels)
    F0 = np.full((n, n_classes), 1.0 / n_classes)
    F0[labeled] = smoothed_onehot(np.asarray(labels)[labeled], n_classes, eps)
    clamp = np.zeros(n, dtype=bool)
    clamp[labeled] = True
    return MaskDraw(F0, clamp, np.empty(0, dtype=np.int64))


# ---------------------------------------------------------------------------
# network


@dataclass
class SelConfig:
    hidden: int = 64
    heads: int = 4
    depths: tuple = (1, 2, 3, 4)  # layers per Inception branch; (4, 4, 4, 4) for the uniform variant
    head_hidden: int = 64
    n_classes: int = N_CLASSES
    alpha: float = 0.2
    lpa_iters: int = 20
    transition_from: str = "deepest"  # branch whose last layer supplies P: "deepest" or an index
    use_lpa: bool = True  # False gives the GAT-only variant


class SelNetwork(Module):
    def __init__(self, n_in: int, cfg: SelConfig, rng: np.random.Generator):
        if not cfg.depths or min(cfg.depths) < 1:
            raise ContractError(f"branch depths must be positive, got {cfg.depths}")
        self.cfg = cfg
        self.n_in = n_in
        self.branches = [[GatLayer(n_in if i == 0 else cfg.hidden, cfg.hidden, rng, cfg.heads, cfg.alpha)
                          for i in range(depth)] for depth in cfg.depths]
        self.skip = Linear(n_in, cfg.hidden, rng, bias=False)
        self.head = MLP(cfg.hidden, cfg.head_hidden, cfg.n_classes, rng, cfg.alpha)

    def _transition_branch(self) -> int:
        if self.cfg.transition_from == "deepest":
            return int(np.argmax(self.cfg.depths))
        return int(self.cfg.transition_from)

    def features(self, x: Tensor, support: Support, trace: list | None = None,
                 zero_branches: bool = False) -> tuple[Tensor, Tensor]:
        """Inception block output and the transition attention E'."""
        outs, att = [], None
        pick = self._transition_branch()
        for b, layers in enumerate(self.branches):
            h = x
            for layer in layers:
                h, a = layer(h, support, trace)
            outs.append(h)
            if b == pick:
                att = a
        avg = outs[0]
        for o in outs[1:]:
            avg = avg + o
        avg = avg * (0.0 if zero_branches else 1.0 / len(outs))
        return avg + self.skip(x), att

    def __call__(self, x: Tensor, support: Support, Y0: np.ndarray, clamp: np.ndarray,
                 trace: list | None = None) -> tuple[Tensor | None, Tensor, Tensor]:
        """Return (F_lpa, residual_pred, E'); F_lpa is None for the GAT-only variant."""
        feats, att = self.features(x, support, trace)
        residual = self.head(feats)
        if not self.cfg.use_lpa:
            return None, residual, att
        F = propagate(att, support, Y0, clamp, self.cfg.lpa_iters)
        return F, residual, att


def sel_forward(embeddings: Tensor, support: Support, net: SelNetwork, draw: MaskDraw,
                trace: list | None = None):
    return net(embeddings, support, draw.F0, draw.clamp, trace)


def residual_target(F_lpa: Tensor, labels: np.ndarray, rows, n_classes: int = N_CLASSES) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.int64)
    onehot = np.zeros((rows.size, n_classes))
    onehot[np.arange(rows.size), np.asarray(labels)[rows]] = 1.0
    return onehot - F_lpa.data[rows]


def sel_loss(F_lpa: Tensor, residual: Tensor, labels: np.ndarray, rows, lam: float = 0.5,
             eps: float = 0.1, n_classes: int = N_CLASSES, target: np.ndarray | None = None) -> Tensor:
    """CE(F_lpa) + lam * MSE(residual, onehot - F_lpa) over ``rows``.

    The residual target is a constant: no gradient reaches F_lpa through it.
    ``target`` overrides it with a fixed array (finite-difference checks
    freeze it at the base point, matching the stop-gradient).
    """
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise ContractError("sel_loss needs a nonempty evaluation set")
    labels = np.asarray(labels)
    targets = np.zeros((len(labels), n_classes))
    targets[rows] = smoothed_onehot(labels[rows], n_classes, eps)
    ce = cross_entropy(F_lpa, targets, rows)
    if lam == 0:
        return ce
    if target is None:
        target = residual_target(F_lpa, labels, rows, n_classes)
    diff = residual[rows] - Tensor(target)
    return ce + (diff * diff).mean() * lam


def gat_only_loss(logits: Tensor, labels: np.ndarray, rows, eps: float = 0.1,
                  n_classes: int = N_CLASSES) -> Tensor:
    rows = np.asarray(rows, dtype=np.int64)
    targets = np.zeros((len(labels), n_classes))
    targets[rows] = smoothed_onehot(np.asarray(labels)[rows], n_classes, eps)
    return cross_entropy(softmax_rows(logits), targets, rows)


def predict(F_lpa: Tensor | None, residual: Tensor) -> np.ndarray:
    scores = residual.data if F_lpa is None else F_lpa.data + residual.data
    return np.argmax(scores, axis=1)

