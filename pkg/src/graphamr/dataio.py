"""Dataset files.

A dataset directory holds

``siso.csv``
    One row per SISO record, no header: ``id, I_1..I_L, Q_1..Q_L, label``.
    Only the received stream is stored, so loaded SISO records are blind
    (no transmit streams).
``mimo_<ntx>x<nrx>.csv``
    First line ``#ntx=<N_T>,nrx=<N_R>,L=<L>``, then per record one row per
    antenna stream: ``id, role, antenna_index, I_1..I_L, Q_1..Q_L, label``
    with role ``T`` or ``R``. TX rows precede RX rows; a record without TX
    rows is blind.
``meta.csv``
    Header ``id,snr_db,n_tx,n_rx,fading``; one row per record.

Labels are class ids 0-10, or -1 for unlabeled. Floats are written with
17 significant digits so files round-trip exactly and repeat byte-for-byte.
"""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ContractError
from .siggen import ChannelSpec, SignalRecord

_FMT = "%.17g"


def _fmt_row(values: np.ndarray) -> str:
    return ",".join(_FMT % v for v in values)


def write_siso_csv(path, records: Iterable[SignalRecord]) -> None:
    lines = []
    for rec in records:
        if rec.n_rx != 1 or rec.n_tx != 1:
            raise ContractError(f"record {rec.id} is not SISO")
        iq = rec.rx_iq[0]
        lines.append(f"{rec.id},{_fmt_row(iq[:, 0])},{_fmt_row(iq[:, 1])},{rec.label}\n")
    Path(path).write_text("".join(lines))


def read_siso_csv(path, meta: dict[int, dict] | None = None) -> list[SignalRecord]:
    text = Path(path).read_text()
    if not text.strip():
        return []
    arr = np.loadtxt(io.StringIO(text), delimiter=",", ndmin=2)
    L = (arr.shape[1] - 2) // 2
    out = []
    for row in arr:
        rid = int(row[0])
        iq = np.stack([row[1:1 + L], row[1 + L:1 + 2 * L]], axis=-1)[None]
        m = (meta or {}).get(rid, {})
        spec = ChannelSpec(1, 1, None, float(m.get("snr_db", np.nan)), m.get("fading", "unknown"))
        out.append(SignalRecord(rid, None, iq, spec, int(row[-1])))
    return out


def write_mimo_csv(path, records: Iterable[SignalRecord]) -> None:
    records = list(records)
    if not records:
        raise ContractError("no records to write")
    n_tx, n_rx, L = records[0].n_tx, records[0].n_rx, records[0].L
    lines = [f"#ntx={n_tx},nrx={n_rx},L={L}\n"]
    for rec in records:
        if (rec.n_tx, rec.n_rx, rec.L) != (n_tx, n_rx, L):
            raise ContractError(f"record {rec.id} geometry differs from file header")
        streams = []
        if rec.tx_iq is not None:
            streams += [("T", i, rec.tx_iq[i]) for i in range(n_tx)]
        streams += [("R", i, rec.rx_iq[i]) for i in range(n_rx)]
        for role, idx, iq in streams:
            lines.append(f"{rec.id},{role},{idx},{_fmt_row(iq[:, 0])},{_fmt_row(iq[:, 1])},{rec.label}\n")
    Path(path).write_text("".join(lines))


def _parse_header(line: str) -> dict[str, int]:
    if not line.startswith("#"):
        raise ContractError(f"missing MIMO header line, got {line[:40]!r}")
    fields = dict(part.split("=") for part in line[1:].strip().split(","))
    return {k: int(v) for k, v in fields.items()}


def read_mimo_csv(path, meta: dict[int, dict] | None = None) -> list[SignalRecord]:
    with open(path) as fh:
        head = _parse_header(fh.readline())
        n_tx, n_rx, L = head["ntx"], head["nrx"], head["L"]
        streams: dict[int, dict] = defaultdict(lambda: {"T": {}, "R": {}, "label": None})
        order: list[int] = []
        for row in csv.reader(fh):
            if not row:
                continue
            rid, role, idx = int(row[0]), row[1], int(row[2])
            vals = np.array(row[3:3 + 2 * L], dtype=np.float64)
            if rid not in streams:
                order.append(rid)
            entry = streams[rid]
            entry[role][idx] = np.stack([vals[:L], vals[L:]], axis=-1)
            entry["label"] = int(row[3 + 2 * L])
    out = []
    for rid in order:
        e = streams[rid]
        if len(e["R"]) != n_rx:
            raise ContractError(f"record {rid}: expected {n_rx} RX rows, found {len(e['R'])}")
        tx = np.stack([e["T"][i] for i in range(n_tx)]) if e["T"] else None
        rx = np.stack([e["R"][i] for i in range(n_rx)])
        m = (meta or {}).get(rid, {})
        spec = ChannelSpec(n_tx, n_rx, None, float(m.get("snr_db", np.nan)), m.get("fading", "unknown"))
        out.append(SignalRecord(rid, tx, rx, spec, e["label"]))
    return out


def write_meta(path, records: Iterable[SignalRecord]) -> None:
    lines = ["id,snr_db,n_tx,n_rx,fading\n"]
    for r in records:
        lines.append(f"{r.id},{_FMT % r.snr_db},{r.n_tx},{r.n_rx},{r.channel.fading}\n")
    Path(path).write_text("".join(lines))


def read_meta(path) -> dict[int, dict]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[int(row["id"])] = {"snr_db": float(row["snr_db"]), "n_tx": int(row["n_tx"]),
                                   "n_rx": int(row["n_rx"]), "fading": row["fading"]}
    return out


def save_dataset(out_dir, records: list[SignalRecord]) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc
    groups: dict[tuple[int, int], list[SignalRecord]] = defaultdict(list)
    for r in records:
        groups[(r.n_tx, r.n_rx)].append(r)
    written = []
    for (n_tx, n_rx), recs in sorted(groups.items()):
        if (n_tx, n_rx) == (1, 1):
            path = out / "siso.csv"
            write_siso_csv(path, recs)
        else:
            path = out / f"mimo_{n_tx}x{n_rx}.csv"
            write_mimo_csv(path, recs)
        written.append(path)
    write_meta(out / "meta.csv", records)
    written.append(out / "meta.csv")
    return written


def load_dataset(data_dir) -> list[SignalRecord]:
    """Load every dataset file in ``data_dir``; records come back sorted by id."""
    d = Path(data_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {d}")
    meta = read_meta(d / "meta.csv") if (d / "meta.csv").exists() else {}
    records: list[SignalRecord] = []
    if (d / "siso.csv").exists():
        records += read_siso_csv(d / "siso.csv", meta)
    for p in sorted(d.glob("mimo_*.csv")):
        records += read_mimo_csv(p, meta)
    if not records:
        raise ContractError(f"no dataset files in {d}")
    return sorted(records, key=lambda r: r.id)
