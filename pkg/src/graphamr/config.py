"""Run configuration: TOML file with one section per component.

Schema (every key optional; defaults are the dataclass defaults)::

    seeds = [0, 1, 2]
    data_dir = "data/desk"      # load records from here instead of generating

    [data]        # DatasetConfig: schemes, samples_per_class, snr_grid, snr_mode,
                  # snr_range, geometries, L, sps, fading, k_factor, fsk_spacing, seed
    [preprocess]  # PreprocessConfig: target_length, mean_filter_window, ...
    [embed]       # EmbedConfig: gin_hidden, gin_width, set2set_steps, embed_dim, ...
    [sel]         # SelConfig: hidden, heads, depths, head_hidden, lpa_iters, ...
    [train]       # TrainConfig: epochs, lr, k, refresh_every, mask_rate, lam, ...

Unknown sections or keys are errors, as are values outside the bounds below.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .embed import EmbedConfig
from .errors import ContractError
from .gatlpa import SelConfig
from .preprocess import PreprocessConfig
from .siggen import DatasetConfig
from .train import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# inclusive numeric bounds per (section, key)
BOUNDS = {
    ("data", "samples_per_class"): (5, 100_000),
    ("data", "L"): (8, 1 << 16),
    ("data", "sps"): (1, 1024),
    ("preprocess", "target_length"): (8, 1 << 16),
    ("preprocess", "mean_filter_window"): (1, 101),
    ("embed", "gin_hidden"): (1, 4096),
    ("embed", "gin_width"): (1, 4096),
    ("embed", "set2set_steps"): (1, 20),
    ("embed", "embed_dim"): (1, 4096),
    ("embed", "alpha"): (0.0, 1.0),
    ("sel", "hidden"): (1, 4096),
    ("sel", "heads"): (1, 16),
    ("sel", "head_hidden"): (1, 4096),
    ("sel", "n_classes"): (2, 64),
    ("sel", "alpha"): (0.0, 1.0),
    ("sel", "lpa_iters"): (1, 1000),
    ("train", "epochs"): (1, 100_000),
    ("train", "lr"): (1e-8, 1.0),
    ("train", "k"): (1, 100),
    ("train", "refresh_every"): (1, 100_000),
    ("train", "mask_rate"): (0.0, 1.0),
    ("train", "lam"): (0.0, 100.0),
    ("train", "eps_ls"): (0.0, 0.99),
    ("train", "labeled_fraction"): (0.0, 1.0),
}

_TUPLE_KEYS = {("sel", "depths"), ("train", "ratios"), ("data", "snr_range")}


@dataclass
class RunConfig:
    data: DatasetConfig = field(default_factory=DatasetConfig)
    data_seed: int = 0
    data_dir: str | None = None
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple = (0, 1, 2)

    @property
    def snr_grid(self):
        return self.data.snr_grid if self.data.snr_mode == "grid" else None

    def validate(self) -> None:
        if not self.seeds:
            raise ContractError("at least one seed is required")
        self.data.validate()
        self.train.validate()
        if self.train.embed.length != self.preprocess.target_length:
            raise ContractError(f"embed.length {self.train.embed.length} differs from "
                                f"preprocess.target_length {self.preprocess.target_length}")


def _section(name: str, cls, values: dict):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ContractError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    out = {}
    for key, v in values.items():
        if (name, key) in BOUNDS:
            lo, hi = BOUNDS[(name, key)]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not lo <= v <= hi:
                raise ContractError(f"[{name}] {key} = {v!r} outside [{lo}, {hi}]")
        if (name, key) in _TUPLE_KEYS:
            v = tuple(v)
        if name == "data" and key == "geometries":
            v = [tuple(g) for g in v]
        out[key] = v
    return cls(**out)


def from_dict(raw: dict) -> RunConfig:
    raw = dict(raw)
    sections = {k: raw.pop(k, {}) for k in ("data", "preprocess", "embed", "sel", "train")}
    data_seed = sections["data"].pop("seed", 0)
    seeds = tuple(raw.pop("seeds", (0, 1, 2)))
    data_dir = raw.pop("data_dir", None)
    if raw:
        raise ContractError(f"unknown top-level key(s): {', '.join(sorted(raw))}")
    for name, sec in sections.items():
        if not isinstance(sec, dict):
            raise ContractError(f"[{name}] must be a table")
    data = _section("data", DatasetConfig, sections["data"])
    pre = _section("preprocess", PreprocessConfig, sections["preprocess"])
    embed = _section("embed", EmbedConfig, sections["embed"])
    if "length" not in sections["embed"]:
        embed = replace(embed, length=pre.target_length)
    sel = _section("sel", SelConfig, sections["sel"])
    if "embed" in sections["train"] or "sel" in sections["train"]:
        raise ContractError("[train] cannot hold embed/sel keys; use the [embed] and [sel] sections")
    train = replace(_section("train", TrainConfig, sections["train"]), embed=embed, sel=sel)
    cfg = RunConfig(data, int(data_seed), data_dir, pre, train, tuple(int(s) for s in seeds))
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    """Parse a TOML run configuration; ``None`` gives the defaults."""
    if path is None:
        return from_dict({})
    p = Path(path)
    try:
        with p.open("rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ContractError(f"config file not found: {p}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ContractError(f"cannot parse {p}: {exc}") from None
    return from_dict(raw)
