"""Joint end-to-end training of the embedder and the sample-graph network.

Training is transductive: every record is a node of one sample graph, the
validation and test nodes take part in propagation with hidden labels, and
each Adam step uses the whole graph.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Adam, Tape, Tensor, restore
from .embed import EmbedConfig, MimoEmbedder, batch_records, stack_batches
from .errors import ContractError, InvariantError
from .gatlpa import (
    ROW_TOL,
    MaskDraw,
    SelConfig,
    SelNetwork,
    Support,
    apply_mask,
    build_transition,
    cross_entropy,
    gat_only_loss,
    predict,
    sel_loss,
    smoothed_onehot,
    visible_input,
)
from .knn import SampleGraph, build_knn_graph
from .metrics import MetricsReport, Split, confusion_matrix, macro_precision, split_dataset, task_classes
from .nn import Linear, Module
from .siggen import SignalRecord

log = logging.getLogger(__name__)

VARIANTS = ("full", "dim-transform", "complete-graph", "gat-only")


@dataclass
class TrainConfig:
    epochs: int = 300
    lr: float = 1e-3
    k: int = 10
    refresh_every: int = 10
    mask_rate: float = 0.5
    lam: float = 0.5
    eps_ls: float = 0.1
    ratios: tuple = (6, 2, 2)
    labeled_fraction: float = 0.5
    blind_tx: bool = True  # receiver-side view: TX streams unknown, placeholder features
    variant: str = "full"
    verify: bool = False  # assert invariants every epoch
    batch_size: int = 64  # kept for reference; steps use the full graph
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    sel: SelConfig = field(default_factory=SelConfig)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.epochs < 1 or self.refresh_every < 1 or self.k < 1:
            raise ContractError("epochs, refresh_every and k must be positive")
        if not 0.0 < self.mask_rate < 1.0:
            raise ContractError("mask_rate must lie in (0, 1)")
        if self.lam < 0 or not 0.0 <= self.eps_ls < 1.0 or self.lr <= 0:
            raise ContractError("lam >= 0, 0 <= eps_ls < 1 and lr > 0 required")
        if len(self.ratios) != 3 or min(self.ratios) <= 0:
            raise ContractError(f"split ratios must be three positive numbers, got {self.ratios}")
        if not 0.0 < self.labeled_fraction < 1.0:
            raise ContractError("labeled_fraction must lie in (0, 1)")


class DimTransform(Module):
    """Ablation stand-in for the graph embedder: a linear map of the mean RX I/Q stream."""

    def __init__(self, length: int, out: int, rng: np.random.Generator):
        self.length = length
        self.linear = Linear(2 * length, out, rng)

    def features(self, records: list[SignalRecord]) -> np.ndarray:
        rows = [np.concatenate([r.rx_iq[..., 0].mean(axis=0), r.rx_iq[..., 1].mean(axis=0)]) for r in records]
        return np.stack(rows)


class AmrModel(Module):
    def __init__(self, cfg: TrainConfig, rng: np.random.Generator):
        self.cfg = cfg
        if cfg.variant == "dim-transform":
            self.embedder = DimTransform(cfg.embed.length, cfg.embed.embed_dim, rng)
        else:
            self.embedder = MimoEmbedder(cfg.embed, rng)
        sel = replace(cfg.sel, use_lpa=cfg.variant != "gat-only", n_classes=cfg.sel.n_classes)
        self.sel = SelNetwork(cfg.embed.embed_dim, sel, rng)
        self._inputs = None

    def prepare(self, records: list[SignalRecord]) -> None:
        """Cache the per-record graph batches (or flat features for the ablation)."""
        if isinstance(self.embedder, DimTransform):
            self._inputs = self.embedder.features(records)
        else:
            gi, gq = batch_records(records, blind=True if self.cfg.blind_tx else None)
            self._inputs = stack_batches(gi, gq) if self.cfg.embed.shared_gin else (gi, gq)

    def embed(self) -> Tensor:
        if self._inputs is None:
            raise ContractError("call prepare(records) before embedding")
        if isinstance(self.embedder, DimTransform):
            return self.embedder.linear(Tensor(self._inputs))
        if isinstance(self._inputs, tuple):
            return self.embedder.forward(*self._inputs)
        return self.embedder.forward_stacked(self._inputs)


# ---------------------------------------------------------------------------
# invariant checks (verification mode)


def _check_rows(values: np.ndarray, support: Support, what: str) -> None:
    if support.dense:
        sums = values.sum(axis=1)
    else:
        flat = values.reshape(len(support.dst), -1)
        sums = np.stack([np.bincount(support.dst, weights=flat[:, h], minlength=support.n)
                         for h in range(flat.shape[1])], axis=1)
    if (values < 0).any() or np.abs(sums - 1.0).max() > ROW_TOL:
        raise InvariantError(f"{what} rows are not stochastic (worst {np.abs(sums - 1).max():.3e})")


def verify_step(trace: list, att: Tensor, support: Support, draw: MaskDraw, F: Tensor | None,
                labels: np.ndarray, visible: np.ndarray, eps: float) -> None:
    for a in trace:
        _check_rows(a, support, "attention")
    _check_rows(att.data, support, "transition")
    build_transition(att.data, support, visible)
    if np.abs(draw.F0.sum(axis=1) - 1.0).max() > ROW_TOL:
        raise InvariantError("soft-label input rows do not sum to 1")
    if F is not None and (np.abs(F.data.sum(axis=1) - 1.0).max() > 1e-9 or (F.data < 0).any()):
        raise InvariantError("propagated label rows are not probability vectors")
    hidden = np.setdiff1d(np.arange(len(labels)), visible)
    C = draw.F0.shape[1]
    if draw.clamp[hidden].any() or np.abs(draw.F0[hidden] - 1.0 / C).max() > 0:
        raise InvariantError("a hidden label reached the propagation input")
    if not np.array_equal(draw.F0[visible], smoothed_onehot(labels[visible], C, eps)):
        raise InvariantError("visible label rows are not smoothed one-hot")


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochMetrics:
    seed: int
    epoch: int
    split: str
    accuracy: float
    macro_precision: float
    loss: float


@dataclass
class RunResult:
    seed: int
    history: list[EpochMetrics]
    best_epoch: int
    test_pred: np.ndarray
    test_idx: np.ndarray
    report: MetricsReport
    params: dict
    runtime_s: float


def _graph(emb: np.ndarray, cfg: TrainConfig) -> Support:
    if cfg.variant == "complete-graph":
        return Support.from_graph(SampleGraph.complete_graph(emb.shape[0]))
    return Support.from_graph(build_knn_graph(emb, cfg.k))


def _eval_loss(F: Tensor | None, residual: Tensor, labels, rows, cfg: TrainConfig) -> float:
    C = residual.shape[1]
    targets = np.zeros((len(labels), C))
    targets[rows] = smoothed_onehot(labels[rows], C, cfg.eps_ls)
    if F is None:
        return gat_only_loss(residual, labels, rows, cfg.eps_ls, C).item()
    return cross_entropy(F, targets, rows).item()


def train_run(records: list[SignalRecord], cfg: TrainConfig, seed: int,
              split: Split | None = None, snr_grid=None) -> RunResult:
    """One seeded training run; returns history, best-validation test predictions and parameters."""
    cfg.validate()
    start = time.perf_counter()
    labels = np.array([r.label for r in records], dtype=np.int64)
    snrs = np.array([r.snr_db for r in records])
    if split is None:
        split = split_dataset(labels, snrs, cfg.ratios, cfg.labeled_fraction, seed)
    if len(records) <= cfg.k:
        raise ContractError(f"{len(records)} records cannot form a {cfg.k}-NN graph")
    rng = np.random.default_rng(seed)
    model = AmrModel(cfg, rng)
    model.prepare(records)
    params = model.named_parameters()
    opt = Adam(params, lr=cfg.lr)
    visible = split.train_labeled
    eval_draw = visible_input(labels, visible, cfg.sel.n_classes, cfg.eps_ls)
    history: list[EpochMetrics] = []
    best = (-1.0, -1, None, None)
    support = None
    for epoch in range(cfg.epochs):
        draw = apply_mask(labels, visible, cfg.mask_rate, rng, cfg.sel.n_classes, cfg.eps_ls)
        trace = [] if cfg.verify else None
        with Tape() as tape:
            emb = model.embed()
            if epoch % cfg.refresh_every == 0:
                support = _graph(emb.data, cfg)
            F, residual, att = model.sel(emb, support, draw.F0, draw.clamp, trace)
            if F is None:
                loss = gat_only_loss(residual, labels, visible, cfg.eps_ls, cfg.sel.n_classes)
            else:
                loss = sel_loss(F, residual, labels, draw.masked, cfg.lam, cfg.eps_ls, cfg.sel.n_classes)
        if cfg.verify:
            verify_step(trace, att, support, draw, F, labels, np.setdiff1d(visible, draw.masked), cfg.eps_ls)

        # metrics for the parameters this step started from (no tape: nothing recorded)
        F, residual, _ = model.sel(Tensor(emb.data), support, eval_draw.F0, eval_draw.clamp)
        pred = predict(F, residual)
        classes = task_classes(labels, pred)
        for name, idx in (("train", split.train_labeled), ("val", split.val), ("test", split.test)):
            conf = confusion_matrix(pred[idx], labels[idx], cfg.sel.n_classes)
            ls = loss.item() if name == "train" else _eval_loss(F, residual, labels, idx, cfg)
            history.append(EpochMetrics(seed, epoch, name, float(np.trace(conf) / conf.sum()),
                                        macro_precision(conf, classes), ls))
        val_acc = history[-2].accuracy
        if val_acc > best[0]:
            best = (val_acc, epoch, pred[split.test].copy(), {k: v.data.copy() for k, v in params.items()})
        log.info("seed %d epoch %d loss %.4f val %.4f", seed, epoch, loss.item(), val_acc)

        tape.backward(loss)
        opt.step()
    _, best_epoch, test_pred, best_params = best
    runtime = time.perf_counter() - start
    report = MetricsReport.from_predictions(test_pred, labels[split.test], snrs[split.test],
                                            cfg.sel.n_classes, snr_grid, runtime, [seed],
                                            classes=task_classes(labels, test_pred))
    return RunResult(seed, history, best_epoch, test_pred, split.test, report, best_params, runtime)


def train(records: list[SignalRecord], cfg: TrainConfig, seeds=(0, 1, 2), snr_grid=None
          ) -> list[RunResult]:
    return [train_run(records, cfg, s, snr_grid=snr_grid) for s in seeds]


def infer(records: list[SignalRecord], cfg: TrainConfig, params: dict, split: Split) -> np.ndarray:
    """Predict every record with stored parameters; only ``split.train_labeled`` labels are visible."""
    cfg.validate()
    labels = np.array([r.label for r in records], dtype=np.int64)
    model = AmrModel(cfg, np.random.default_rng(0))
    restore(model.named_parameters(), params)
    model.prepare(records)
    emb = model.embed()
    support = _graph(emb.data, cfg)
    draw = visible_input(labels, split.train_labeled, cfg.sel.n_classes, cfg.eps_ls)
    F, residual, _ = model.sel(emb, support, draw.F0, draw.clamp)
    return predict(F, residual)
