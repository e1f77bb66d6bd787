import csv

import pytest

from graphamr.cli import METRIC_COLUMNS, main
from graphamr.config import from_dict, load_config
from graphamr.errors import ContractError

TINY = """
seeds = [0, 1]

[data]
schemes = ["2PSK", "2FSK"]
samples_per_class = 20
snr_grid = [0, 10]
L = 64
seed = 3

[preprocess]
target_length = 64

[embed]
gin_hidden = 16
gin_width = 8
embed_dim = 8

[sel]
hidden = 8
depths = [1, 2]
head_hidden = 8

[train]
epochs = 3
k = 4
"""


@pytest.fixture
def conf(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(TINY)
    return str(p)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# --- config -----------------------------------------------------------------

def test_config_sections(conf):
    cfg = load_config(conf)
    assert cfg.seeds == (0, 1) and cfg.data_seed == 3
    assert cfg.train.embed.length == 64 and cfg.train.sel.depths == (1, 2)
    assert cfg.train.epochs == 3 and cfg.train.k == 4


def test_default_config():
    cfg = load_config(None)
    assert cfg.train.epochs == 300 and cfg.seeds == (0, 1, 2)
    assert cfg.train.ratios == (6, 2, 2) and cfg.train.labeled_fraction == 0.5


@pytest.mark.parametrize("raw", [
    {"train": {"bogus": 1}},
    {"bogus": 1},
    {"train": {"k": 0}},
    {"train": {"mask_rate": 1.5}},
    {"embed": {"set2set_steps": 0}},
    {"sel": {"heads": 99}},
    {"train": {"ratios": [6, -1, 2]}},
    {"preprocess": {"target_length": 128}, "embed": {"length": 64}},
    {"seeds": []},
])
def test_config_rejects(raw):
    with pytest.raises(ContractError):
        from_dict(raw)


def test_config_parse_error(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[train\nepochs = ")
    with pytest.raises(ContractError):
        load_config(p)


# --- commands ---------------------------------------------------------------

def test_train_twice_identical_metrics(conf, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", conf, "--seed", "1", "--out", str(a)]) == 0
    assert main(["train", "--config", conf, "--seed", "1", "--out", str(b)]) == 0
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    rows = _rows(a / "metrics.csv")
    assert tuple(rows[0]) == METRIC_COLUMNS
    assert len(rows) == 1 + 3 * 3
    assert (a / "checkpoints" / "seed_1.ckpt").exists()


def test_full_workflow(conf, tmp_path):
    raw, pre, run = tmp_path / "raw", tmp_path / "pre", tmp_path / "run"
    assert main(["generate", "--config", conf, "--out", str(raw)]) == 0
    assert (raw / "siso.csv").exists()
    assert main(["preprocess", "--config", conf, "--data", str(raw), "--out", str(pre)]) == 0
    assert main(["train", "--config", conf, "--data", str(pre), "--preprocessed", "--out", str(run),
                 "--verify"]) == 0
    seeds = {r[0] for r in _rows(run / "metrics.csv")[1:]}
    assert seeds == {"0", "1"}
    assert main(["evaluate", "--config", conf, "--data", str(pre), "--preprocessed",
                 "--checkpoints", str(run / "checkpoints"), "--out", str(run)]) == 0
    assert len(_rows(run / "eval_summary.csv")) == 3
    plots = tmp_path / "plots"
    assert main(["plot", str(run / "metrics.csv"), str(run / "per_snr.csv"), "--out", str(plots)]) == 0
    for metric in ("accuracy", "macro_precision", "loss", "per_snr_accuracy"):
        assert (plots / f"{metric}.svg").read_text().lstrip().startswith("<?xml")
        assert (plots / f"{metric}.csv").exists()


def test_ablate_one_row_per_variant(conf, tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", "--config", conf, "--seed", "0", "--out", str(out),
                 "--variants", "full", "gat-only"]) == 0
    rows = _rows(out / "ablation.csv")
    assert rows[0] == ["variant", "seed", "macro_precision", "accuracy"]
    means = [r for r in rows[1:] if r[1] == "mean"]
    assert [r[0] for r in means] == ["full", "gat-only"]
    assert main(["plot", str(out / "ablation.csv"), "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "ablation_macro_precision.svg").exists()


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus", "--out", "x"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_errors_exit_1_with_one_line(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "missing.toml"), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err.strip()
    assert len(err.splitlines()) == 1 and "error" in err
    assert main(["evaluate", "--config", str(tmp_path / "missing.toml"), "--checkpoints", "x",
                 "--out", str(tmp_path)]) == 1


def test_missing_checkpoint_exit_1(conf, tmp_path, capsys):
    assert main(["evaluate", "--config", conf, "--checkpoints", str(tmp_path), "--out", str(tmp_path)]) == 1
    assert "checkpoint" in capsys.readouterr().err


def test_plot_rejects_unknown_csv(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    assert main(["plot", str(p), "--out", str(tmp_path)]) == 1
