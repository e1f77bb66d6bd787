"""SVG plots (with the plotted numbers as CSV) from the CSV files the CLI writes."""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ContractError  # noqa: E402

METRICS = ("accuracy", "macro_precision", "loss")


def _read(path) -> tuple[list[str], list[dict]]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        return list(reader.fieldnames or []), rows


def _save(fig, out: Path, name: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    p = out / f"{name}.svg"
    fig.savefig(p, format="svg", metadata={"Date": None})  # no timestamp: reruns give identical files
    plt.close(fig)
    return p


def _write(out: Path, name: str, columns, rows) -> Path:
    p = out / f"{name}.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        w.writerows(rows)
    return p


def plot_metrics(rows: list[dict], out: Path) -> list[Path]:
    """One SVG per metric: seed-mean curve per split against epoch."""
    written = []
    for metric in METRICS:
        curves: dict[str, dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
        for r in rows:
            curves[r["split"]][int(r["epoch"])].append(float(r[metric]))
        fig, ax = plt.subplots(figsize=(6, 4))
        table = []
        for split in sorted(curves):
            epochs = sorted(curves[split])
            mean = [float(np.mean(curves[split][e])) for e in epochs]
            ax.plot(epochs, mean, label=split)
            table += [(split, e, repr(m)) for e, m in zip(epochs, mean)]
        ax.set_xlabel("epoch")
        ax.set_ylabel(metric.replace("_", " "))
        ax.legend()
        ax.grid(alpha=0.3)
        written += [_save(fig, out, metric), _write(out, metric, ("split", "epoch", "mean"), table)]
    return written


def plot_per_snr(rows: list[dict], out: Path, name: str = "per_snr_accuracy") -> list[Path]:
    by_seed: dict[str, dict[float, float]] = defaultdict(dict)
    for r in rows:
        by_seed[r["seed"]][float(r["snr_db"])] = float(r["accuracy"])
    snrs = sorted({s for d in by_seed.values() for s in d})
    mean = [float(np.mean([d[s] for d in by_seed.values() if s in d])) for s in snrs]
    fig, ax = plt.subplots(figsize=(6, 4))
    for seed in sorted(by_seed):
        xs = sorted(by_seed[seed])
        ax.plot(xs, [by_seed[seed][x] for x in xs], alpha=0.35, marker=".", label=f"seed {seed}")
    ax.plot(snrs, mean, color="k", marker="o", label="mean")
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.02)
    ax.legend()
    ax.grid(alpha=0.3)
    return [_save(fig, out, name), _write(out, name, ("snr_db", "mean_accuracy"),
                                          [(repr(s), repr(m)) for s, m in zip(snrs, mean)])]


def plot_ablation(rows: list[dict], out: Path) -> list[Path]:
    means = [(r["variant"], float(r["macro_precision"])) for r in rows if r["seed"] == "mean"]
    if not means:
        per: dict[str, list[float]] = defaultdict(list)
        for r in rows:
            per[r["variant"]].append(float(r["macro_precision"]))
        means = [(v, float(np.mean(x))) for v, x in per.items()]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([v for v, _ in means], [m for _, m in means], color="tab:blue")
    ax.set_ylabel("macro precision")
    ax.set_ylim(0, 1.0)
    ax.grid(axis="y", alpha=0.3)
    name = "ablation_macro_precision"
    return [_save(fig, out, name), _write(out, name, ("variant", "macro_precision"),
                                          [(v, repr(m)) for v, m in means])]


def plot_csv(path, out) -> list[Path]:
    """Dispatch on the CSV header written by train, evaluate or ablate."""
    p = Path(path)
    if not p.exists():
        raise ContractError(f"no such CSV: {p}")
    cols, rows = _read(p)
    if not rows:
        raise ContractError(f"{p} has no data rows")
    out = Path(out)
    if {"epoch", "split", *METRICS} <= set(cols):
        return plot_metrics(rows, out)
    if {"seed", "snr_db", "accuracy"} <= set(cols):
        return plot_per_snr(rows, out, p.stem if p.stem != "per_snr" else "per_snr_accuracy")
    if {"variant", "macro_precision"} <= set(cols):
        return plot_ablation(rows, out)
    raise ContractError(f"unrecognized CSV columns in {p}: {', '.join(cols)}")
