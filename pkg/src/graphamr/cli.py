"""Command-line entry point: generate, preprocess, train, evaluate, ablate, plot."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .autodiff import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .dataio import load_dataset, save_dataset
from .errors import ContractError, InvariantError
from .metrics import MetricsReport, split_dataset, task_classes
from .preprocess import preprocess_records
from .siggen import generate_records
from .train import VARIANTS, RunResult, infer, train_run

METRIC_COLUMNS = ("seed", "epoch", "split", "accuracy", "macro_precision", "loss")
PER_SNR_COLUMNS = ("seed", "snr_db", "accuracy")
ABLATION_COLUMNS = ("variant", "seed", "macro_precision", "accuracy")


# ---------------------------------------------------------------------------
# helpers


def _records(cfg: RunConfig, data: str | None, preprocessed: bool):
    src = data or cfg.data_dir
    recs = load_dataset(src) if src else generate_records(cfg.data, cfg.data_seed)
    return recs if preprocessed else preprocess_records(recs, cfg.preprocess)


def _seeds(cfg: RunConfig, seed: int | None) -> tuple:
    return (seed,) if seed is not None else cfg.seeds


def _write_csv(path: Path, columns, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        w.writerows(rows)


def _fmt(x: float) -> str:
    return repr(float(x))


def _per_snr_rows(results: list[RunResult]):
    rows = []
    for r in results:
        rows += [(r.seed, _fmt(s), _fmt(a)) for s, a in sorted(r.report.per_snr.items())]
    return rows


def _summary(results: list[RunResult]) -> dict:
    snrs = sorted({s for r in results for s in r.report.per_snr})
    return {
        "seeds": [r.seed for r in results],
        "test_accuracy": [r.report.accuracy for r in results],
        "test_macro_precision": [r.report.macro_precision for r in results],
        "mean_test_accuracy": float(np.mean([r.report.accuracy for r in results])),
        "mean_test_macro_precision": float(np.mean([r.report.macro_precision for r in results])),
        "mean_per_snr": {str(s): float(np.mean([r.report.per_snr[s] for r in results if s in r.report.per_snr]))
                         for s in snrs},
        "best_epoch": [r.best_epoch for r in results],
        "runtime_s": [r.runtime_s for r in results],
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args, cfg: RunConfig) -> None:
    data_seed = cfg.data_seed if args.seed is None else args.seed
    recs = generate_records(cfg.data, data_seed)
    for p in save_dataset(args.out, recs):
        print(p)


def cmd_preprocess(args, cfg: RunConfig) -> None:
    src = args.data or cfg.data_dir
    if not src:
        raise ContractError("preprocess needs --data or data_dir in the config")
    for p in save_dataset(args.out, preprocess_records(load_dataset(src), cfg.preprocess)):
        print(p)


def cmd_train(args, cfg: RunConfig) -> None:
    recs = _records(cfg, args.data, args.preprocessed)
    out = Path(args.out)
    tcfg = replace(cfg.train, verify=cfg.train.verify or args.verify)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    results = []
    for seed in _seeds(cfg, args.seed):
        r = train_run(recs, tcfg, seed, snr_grid=cfg.snr_grid)
        results.append(r)
        save_checkpoint(out / "checkpoints" / f"seed_{seed}.ckpt", r.params)
        print(f"seed {seed}: best epoch {r.best_epoch}, test accuracy {r.report.accuracy:.4f}, "
              f"macro precision {r.report.macro_precision:.4f}")
    _write_csv(out / "metrics.csv", METRIC_COLUMNS,
               [(m.seed, m.epoch, m.split, _fmt(m.accuracy), _fmt(m.macro_precision), _fmt(m.loss))
                for r in results for m in r.history])
    _write_csv(out / "per_snr.csv", PER_SNR_COLUMNS, _per_snr_rows(results))
    (out / "summary.json").write_text(json.dumps(_summary(results), indent=2) + "\n")


def cmd_evaluate(args, cfg: RunConfig) -> None:
    recs = _records(cfg, args.data, args.preprocessed)
    labels = np.array([r.label for r in recs])
    snrs = np.array([r.snr_db for r in recs])
    ckpt_dir = Path(args.checkpoints)
    rows, reports = [], []
    for seed in _seeds(cfg, args.seed):
        path = ckpt_dir / f"seed_{seed}.ckpt"
        if not path.exists():
            raise ContractError(f"no checkpoint for seed {seed} in {ckpt_dir}")
        split = split_dataset(labels, snrs, cfg.train.ratios, cfg.train.labeled_fraction, seed)
        pred = infer(recs, cfg.train, load_checkpoint(path), split)
        t = split.test
        rep = MetricsReport.from_predictions(pred[t], labels[t], snrs[t], cfg.train.sel.n_classes,
                                             cfg.snr_grid, seeds=[seed], classes=task_classes(labels, pred))
        reports.append(rep)
        rows += [(seed, _fmt(s), _fmt(a)) for s, a in sorted(rep.per_snr.items())]
        print(f"seed {seed}: test accuracy {rep.accuracy:.4f}, macro precision {rep.macro_precision:.4f}")
    out = Path(args.out)
    _write_csv(out / "eval_per_snr.csv", PER_SNR_COLUMNS, rows)
    _write_csv(out / "eval_summary.csv", ("seed", "accuracy", "macro_precision"),
               [(s, _fmt(r.accuracy), _fmt(r.macro_precision)) for s, r in zip(_seeds(cfg, args.seed), reports)])


def cmd_ablate(args, cfg: RunConfig) -> None:
    recs = _records(cfg, args.data, args.preprocessed)
    variants = args.variants or list(VARIANTS)
    rows = []
    for v in variants:
        if v not in VARIANTS:
            raise ContractError(f"unknown variant {v!r}; choose from {', '.join(VARIANTS)}")
        tcfg = replace(cfg.train, variant=v)
        res = [train_run(recs, tcfg, s, snr_grid=cfg.snr_grid) for s in _seeds(cfg, args.seed)]
        rows += [(v, r.seed, _fmt(r.report.macro_precision), _fmt(r.report.accuracy)) for r in res]
        mp = float(np.mean([r.report.macro_precision for r in res]))
        acc = float(np.mean([r.report.accuracy for r in res]))
        rows.append((v, "mean", _fmt(mp), _fmt(acc)))
        print(f"{v:15s} macro precision {mp:.4f}  accuracy {acc:.4f}")
    _write_csv(Path(args.out) / "ablation.csv", ABLATION_COLUMNS, rows)


def cmd_plot(args, cfg: RunConfig) -> None:
    from . import plots

    out = Path(args.out)
    for src in args.inputs:
        for p in plots.plot_csv(src, out):
            print(p)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphamr", description="Graph-based modulation recognition lab")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_, data=True):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--seed", type=int, help="single seed overriding the configured seeds")
        p.add_argument("--out", required=True, help="output directory")
        if data:
            p.add_argument("--data", help="dataset directory (overrides data_dir)")
            p.add_argument("--preprocessed", action="store_true", help="records are already preprocessed")
        p.set_defaults(func=func)
        return p

    add("generate", cmd_generate, "synthesize a labeled IQ dataset", data=False)
    p = add("preprocess", cmd_preprocess, "resample, normalize and denoise a dataset")
    p.set_defaults(preprocessed=False)
    p = add("train", cmd_train, "train and write metrics, checkpoints and per-SNR accuracy")
    p.add_argument("--verify", action="store_true", help="check invariants every epoch")
    p = add("evaluate", cmd_evaluate, "evaluate stored checkpoints on the test split")
    p.add_argument("--checkpoints", required=True, help="directory holding seed_<n>.ckpt files")
    p = add("ablate", cmd_ablate, "train each ablation variant and report macro precision")
    p.add_argument("--variants", nargs="+", metavar="NAME", help=f"subset of {', '.join(VARIANTS)}")
    p = add("plot", cmd_plot, "SVG + CSV plots from metrics, per-SNR or ablation CSV files", data=False)
    p.add_argument("inputs", nargs="+", help="CSV files written by train/evaluate/ablate")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except (ContractError, InvariantError, OSError, ValueError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"graphamr {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
