"""Dataset splits and classification metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import ContractError, StratificationError

MIN_PER_CLASS = 5


def confusion_matrix(pred, true, n_classes: int) -> np.ndarray:
    """C[t, p] counts samples of true class t predicted as p."""
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if pred.shape != true.shape:
        raise ContractError(f"{pred.shape[0]} predictions for {true.shape[0]} labels")
    return np.bincount(true * n_classes + pred, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def task_classes(*label_arrays) -> np.ndarray:
    """Classes that occur in any of the given label/prediction arrays."""
    return np.unique(np.concatenate([np.asarray(a, dtype=np.int64).ravel() for a in label_arrays]))


def macro_precision(conf: np.ndarray, classes=None) -> float:
    """Mean over classes of TP / (TP + FP); classes never predicted count as 0.

    ``classes`` restricts the mean to the task's classes (e.g. 4 of the 11
    class ids); by default every row of the confusion matrix counts.
    """
    conf = np.asarray(conf)
    if classes is not None:
        classes = np.asarray(classes, dtype=np.int64)
        conf = conf[np.ix_(classes, classes)] if len(classes) < conf.shape[0] else conf
        # predictions of classes outside the task are misses, not false positives of a task class
    tp = np.diag(conf).astype(float)
    predicted = conf.sum(axis=0).astype(float)
    per_class = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    return float(per_class.mean())


def accuracy(conf: np.ndarray) -> float:
    conf = np.asarray(conf)
    total = conf.sum()
    return float(np.trace(conf) / total) if total else float("nan")


def accuracy_per_snr(pred, labels, snrs, grid=None) -> dict[float, float]:
    """Accuracy per SNR value; bins without samples are left out.

    With ``grid`` each SNR is snapped to the nearest grid value first.
    """
    pred, labels, snrs = np.asarray(pred), np.asarray(labels), np.asarray(snrs, dtype=float)
    if not (pred.shape == labels.shape == snrs.shape):
        raise ContractError("predictions, labels and SNRs must be aligned")
    if grid is not None:
        g = np.asarray(sorted(grid), dtype=float)
        snrs = g[np.abs(snrs[:, None] - g[None, :]).argmin(axis=1)]
    out = {}
    for s in np.unique(snrs):
        sel = snrs == s
        out[float(s)] = float((pred[sel] == labels[sel]).mean())
    return out


@dataclass
class MetricsReport:
    confusion: np.ndarray
    macro_precision: float
    accuracy: float
    per_snr: dict
    runtime_s: float = 0.0
    seeds: list = field(default_factory=list)

    @classmethod
    def from_predictions(cls, pred, labels, snrs, n_classes: int, grid=None, runtime_s=0.0, seeds=(),
                         classes=None):
        conf = confusion_matrix(pred, labels, n_classes)
        if classes is None:
            classes = task_classes(labels, pred)
        return cls(conf, macro_precision(conf, classes), accuracy(conf), accuracy_per_snr(pred, labels, snrs, grid),
                   runtime_s, list(seeds))


# ---------------------------------------------------------------------------
# splits


@dataclass
class Split:
    train_labeled: np.ndarray
    train_unlabeled: np.ndarray
    val: np.ndarray
    test: np.ndarray

    @property
    def train(self) -> np.ndarray:
        return np.sort(np.concatenate([self.train_labeled, self.train_unlabeled]))

    def sizes(self) -> dict[str, int]:
        return {k: len(getattr(self, k)) for k in ("train_labeled", "train_unlabeled", "val", "test")}


def _apportion(total: int, weights) -> np.ndarray:
    """Integer counts summing to ``total``, proportional to ``weights`` (largest remainder)."""
    w = np.asarray(weights, dtype=float)
    ideal = total * w / w.sum()
    counts = np.floor(ideal).astype(int)
    rest = total - counts.sum()
    order = np.lexsort((np.arange(len(w)), -(ideal - counts)))
    counts[order[:rest]] += 1
    return counts


def _interleave(counts) -> np.ndarray:
    """Part ids spread evenly: part j appears counts[j] times at positions (i + 0.5) / counts[j]."""
    keys, parts = [], []
    for j, c in enumerate(counts):
        keys.extend((np.arange(c) + 0.5) / c)
        parts.extend([j] * c)
    order = np.lexsort((parts, keys))
    return np.asarray(parts, dtype=int)[order]


def _class_quotas(sizes: np.ndarray, ratios: np.ndarray) -> np.ndarray:
    """Per-class split counts: each row sums to the class size, columns match the global apportionment.

    Every cell is the floor or ceiling of its ideal share. Which cells round
    up is a small transportation problem; its LP vertices are integral, so
    the simplex solution is an exact rounding that favours large remainders.
    """
    target = _apportion(int(sizes.sum()), ratios)
    ideal = sizes[:, None] * ratios[None, :] / ratios.sum()
    q = np.floor(ideal).astype(int)
    need_row = sizes - q.sum(axis=1)
    need_col = target - q.sum(axis=0)
    R, K = q.shape
    A = np.zeros((R + K, R * K))
    for r in range(R):
        A[r, r * K:(r + 1) * K] = 1.0
    for c in range(K):
        A[R + c, c::K] = 1.0
    frac = (ideal - q).ravel()
    cost = -frac + 1e-9 * np.arange(R * K)  # index tie-break keeps the choice deterministic
    res = linprog(cost, A_eq=A, b_eq=np.concatenate([need_row, need_col]), bounds=(0, 1), method="highs-ds")
    if res.status != 0:  # pragma: no cover - margins from _apportion are always feasible
        raise ContractError(f"cannot apportion classes {sizes.tolist()} over ratios {ratios.tolist()}")
    return q + np.rint(res.x).astype(int).reshape(R, K)


def split_dataset(labels, snrs, ratios=(6, 2, 2), labeled_fraction: float = 0.5,
                  seed: int = 0) -> Split:
    """Stratified train/val/test split, then labeled/unlabeled within train.

    Records are grouped by class; inside a class they are ordered by SNR
    (random order within one SNR) and the split ids are interleaved evenly
    over that order, so each split sees every SNR bin in proportion.
    """
    labels = np.asarray(labels, dtype=np.int64)
    snrs = np.asarray(snrs, dtype=float)
    ratios = np.asarray(ratios, dtype=float)
    if ratios.shape != (3,) or (ratios <= 0).any():
        raise ContractError(f"split ratios must be three positive numbers, got {ratios}")
    if not 0.0 < labeled_fraction < 1.0:
        raise ContractError("labeled_fraction must lie in (0, 1)")
    classes, sizes = np.unique(labels, return_counts=True)
    if (sizes < MIN_PER_CLASS).any():
        bad = classes[sizes < MIN_PER_CLASS]
        raise StratificationError(f"classes {bad.tolist()} have fewer than {MIN_PER_CLASS} records")
    rng = np.random.default_rng(seed)
    quotas = _class_quotas(sizes, ratios)
    lab_quotas = _class_quotas(quotas[:, 0], np.array([labeled_fraction, 1.0 - labeled_fraction]))
    parts: list[list[int]] = [[], [], [], []]
    for c, q, lq in zip(classes, quotas, lab_quotas):
        idx = np.flatnonzero(labels == c)
        idx = idx[np.lexsort((rng.random(idx.size), snrs[idx]))]
        which = _interleave(q)
        train = idx[which == 0]
        parts[2].extend(idx[which == 1])
        parts[3].extend(idx[which == 2])
        lab = _interleave(lq)
        parts[0].extend(train[lab == 0])
        parts[1].extend(train[lab == 1])
    return Split(*(np.sort(np.asarray(p, dtype=np.int64)) for p in parts))
