import numpy as np
import pytest

from graphamr.dataio import load_dataset, read_siso_csv
from graphamr.errors import ContractError, ShapeError
from graphamr.siggen import (
    BITS_PER_SYMBOL,
    CLASS_ID,
    SCHEMES,
    ChannelSpec,
    DatasetConfig,
    apply_channel,
    constellation,
    fsk_frequencies,
    from_iq,
    generate_dataset,
    generate_records,
    modulate,
)

CONSTELLATION_SCHEMES = [s for s in SCHEMES if not s.endswith("FSK")]


def test_class_ids_follow_listed_order():
    assert SCHEMES == ("16QAM", "2ASK", "2FSK", "2PSK", "32QAM", "4ASK", "4FSK", "4PSK",
                       "64QAM", "8FSK", "8PSK")
    assert [CLASS_ID[s] for s in SCHEMES] == list(range(11))


def test_bpsk_symbols():
    out = modulate([0, 1], "2PSK", sps=1, L=2)
    np.testing.assert_array_equal(out, [1 + 0j, -1 + 0j])


@pytest.mark.parametrize("scheme", CONSTELLATION_SCHEMES)
def test_constellations_unit_power_and_distinct(scheme):
    pts = constellation(scheme)
    assert len(pts) == 2 ** BITS_PER_SYMBOL[scheme]
    assert abs(np.mean(np.abs(pts) ** 2) - 1.0) < 1e-9
    assert len(np.unique(np.round(pts, 9))) == len(pts)


def test_16qam_has_16_points():
    assert len(constellation("16QAM")) == 16


@pytest.mark.parametrize("scheme", ["16QAM", "64QAM", "4PSK", "8PSK", "4ASK"])
def test_gray_coding_neighbours_differ_in_one_bit(scheme):
    pts = constellation(scheme)
    dist = np.abs(pts[:, None] - pts[None, :])
    np.fill_diagonal(dist, np.inf)
    dmin = dist.min()
    for a in range(len(pts)):
        for b in np.flatnonzero(np.isclose(dist[a], dmin)):
            assert bin(a ^ b).count("1") == 1


def test_2fsk_tones_peak_at_configured_frequencies():
    L, sps = 1024, 8
    freqs = fsk_frequencies("2FSK")
    for bit in (0, 1):
        wave = modulate([bit] * (L // sps), "2FSK", sps=sps, L=L)
        spectrum = np.abs(np.fft.fft(wave))
        peak = np.fft.fftfreq(L)[np.argmax(spectrum)]
        assert peak == pytest.approx(freqs[bit], abs=1.0 / L)
    assert freqs[0] != freqs[1]


def test_fsk_tones_stay_below_nyquist():
    for scheme in ("2FSK", "4FSK", "8FSK"):
        assert np.all(np.abs(fsk_frequencies(scheme)) < 0.5)


def test_modulate_errors():
    with pytest.raises(ContractError):
        modulate([0] * 10, "OOK", sps=1, L=10)
    with pytest.raises(ShapeError):
        modulate([0] * 100, "2PSK", sps=8, L=100)
    with pytest.raises(ContractError):
        modulate([0] * 3, "4PSK", sps=1, L=4)


def test_modulate_output_length():
    for scheme in SCHEMES:
        bits = np.zeros(128 * BITS_PER_SYMBOL[scheme], dtype=int)
        assert modulate(bits, scheme, sps=8, L=1024).shape == (1024,)


# --- channel --------------------------------------------------------------

def test_channel_noiseless_limit():
    rng = np.random.default_rng(0)
    x = modulate(rng.integers(0, 2, 256), "4PSK", sps=4, L=512)[None]
    y = apply_channel(x, ChannelSpec(1, 1, np.eye(1, dtype=complex), 100.0), rng)
    assert np.max(np.abs(y - x)) / np.max(np.abs(x)) < 1e-4


def test_channel_0db_noise_ratio():
    rng = np.random.default_rng(1)
    x = modulate(rng.integers(0, 2, 2048), "4PSK", sps=4, L=4096)[None]
    y = apply_channel(x, ChannelSpec(1, 1, np.eye(1, dtype=complex), 0.0), rng)
    ratio = np.mean(np.abs(y - x) ** 2) / np.mean(np.abs(x) ** 2)
    assert 0.9 <= ratio <= 1.1


def test_channel_shape_contract():
    rng = np.random.default_rng(2)
    x = np.ones((4, 64), dtype=complex)
    H = rng.normal(size=(2, 4)) + 0j
    assert apply_channel(x, ChannelSpec(4, 2, H, 10.0), rng).shape == (2, 64)
    with pytest.raises(ShapeError):
        apply_channel(np.ones((3, 64)), ChannelSpec(4, 2, H, 10.0), rng)


def test_empirical_snr_matches_request():
    cfg = DatasetConfig(schemes=["4PSK", "16QAM", "2FSK", "4ASK"], samples_per_class=25,
                        snr_grid=[7.0], geometries=[(1, 1)])
    measured = []
    for rec in generate_records(cfg, seed=3):
        H = rec.channel.H
        clean = H @ from_iq(rec.tx_iq)
        noise = from_iq(rec.rx_iq) - clean
        measured.append(10 * np.log10(np.mean(np.abs(clean) ** 2) / np.mean(np.abs(noise) ** 2)))
    assert len(measured) == 100
    assert abs(np.mean(measured) - 7.0) < 0.5


# --- datasets ---------------------------------------------------------------

def small_config(**kw):
    base = dict(samples_per_class=2, snr_grid=[0.0, 10.0], L=64, sps=8)
    base.update(kw)
    return DatasetConfig(**base)


def test_all_schemes_two_samples():
    recs = generate_records(small_config(), seed=0)
    assert len(recs) == 22
    assert sorted({r.label for r in recs}) == list(range(11))


def test_per_class_counts_match_config():
    cfg = small_config(schemes=["2PSK", "8FSK"], samples_per_class=5, geometries=[(1, 1), (4, 2)])
    recs = generate_records(cfg, seed=0)
    for label in (CLASS_ID["2PSK"], CLASS_ID["8FSK"]):
        assert sum(r.label == label for r in recs) == 10


def test_records_are_shuffled_and_shaped():
    recs = generate_records(small_config(geometries=[(4, 2)]), seed=1)
    assert [r.id for r in recs] != sorted(r.id for r in recs)
    for r in recs:
        assert np.concatenate([r.tx_iq, r.rx_iq]).shape == (6, 64, 2)
        assert r.stacked().shape == (6, 64, 2)


def test_same_seed_gives_byte_identical_files(tmp_path):
    cfg = small_config(geometries=[(1, 1), (4, 2)])
    generate_dataset(cfg, seed=9, out_dir=tmp_path / "a")
    generate_dataset(cfg, seed=9, out_dir=tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["meta.csv", "mimo_4x2.csv", "siso.csv"]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_generation_depends_on_seed():
    a = generate_records(small_config(), seed=1)
    b = generate_records(small_config(), seed=2)
    assert not np.array_equal(a[0].rx_iq, b[0].rx_iq)


def test_siso_csv_column_layout(tmp_path):
    recs = generate_dataset(small_config(schemes=["2PSK"]), seed=0, out_dir=tmp_path)
    row = (tmp_path / "siso.csv").read_text().splitlines()[0].split(",")
    assert len(row) == 1 + 64 + 64 + 1
    rec = recs[0]
    assert int(row[0]) == rec.id
    assert float(row[1]) == rec.rx_iq[0, 0, 0]
    assert float(row[65]) == rec.rx_iq[0, 0, 1]
    assert int(row[-1]) == CLASS_ID["2PSK"]


def test_dataset_roundtrip(tmp_path):
    recs = generate_dataset(small_config(geometries=[(1, 1), (4, 2)]), seed=4, out_dir=tmp_path)
    loaded = load_dataset(tmp_path)
    by_id = {r.id: r for r in recs}
    assert len(loaded) == len(recs)
    for r in loaded:
        src = by_id[r.id]
        np.testing.assert_array_equal(r.rx_iq, src.rx_iq)
        assert r.label == src.label and r.snr_db == src.snr_db
        if (r.n_tx, r.n_rx) == (1, 1):
            assert r.tx_iq is None  # the SISO format stores only the received stream
        else:
            np.testing.assert_array_equal(r.tx_iq, src.tx_iq)


def test_mimo_header(tmp_path):
    generate_dataset(small_config(geometries=[(16, 4)], schemes=["4PSK"], samples_per_class=1),
                     seed=0, out_dir=tmp_path)
    lines = (tmp_path / "mimo_16x4.csv").read_text().splitlines()
    assert lines[0] == "#ntx=16,nrx=4,L=64"
    assert len(lines) == 1 + 20
    assert [ln.split(",")[1] for ln in lines[1:]] == ["T"] * 16 + ["R"] * 4


def test_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        generate_dataset(small_config(), seed=0, out_dir=blocker / "sub")


def test_rician_option_and_uniform_snr():
    cfg = small_config(fading="rician", snr_mode="uniform", snr_range=(-5.0, 5.0))
    recs = generate_records(cfg, seed=0)
    assert all(r.channel.fading == "rician" for r in recs)
    assert all(-5.0 <= r.snr_db <= 5.0 for r in recs)
    assert len({r.snr_db for r in recs}) == len(recs)


def test_siso_reader_handles_empty(tmp_path):
    (tmp_path / "siso.csv").write_text("")
    assert read_siso_csv(tmp_path / "siso.csv") == []
