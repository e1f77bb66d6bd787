"""Synthetic labeled IQ datasets over SISO and MIMO flat-fading channels."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, ShapeError

SCHEMES: tuple[str, ...] = (
    "16QAM", "2ASK", "2FSK", "2PSK", "32QAM", "4ASK", "4FSK", "4PSK", "64QAM", "8FSK", "8PSK",
)
CLASS_ID = {name: i for i, name in enumerate(SCHEMES)}
UNLABELED = -1

BITS_PER_SYMBOL = {
    "2ASK": 1, "2FSK": 1, "2PSK": 1, "4ASK": 2, "4FSK": 2, "4PSK": 2,
    "8FSK": 3, "8PSK": 3, "16QAM": 4, "32QAM": 5, "64QAM": 6,
}


@dataclass
class ChannelSpec:
    n_tx: int
    n_rx: int
    H: np.ndarray | None  # complex, n_rx x n_tx
    snr_db: float
    fading: str = "rayleigh"

    @property
    def is_siso(self) -> bool:
        return self.n_tx == 1 and self.n_rx == 1


@dataclass
class SignalRecord:
    id: int
    tx_iq: np.ndarray | None  # n_tx x L x 2, None when the transmit side is unknown
    rx_iq: np.ndarray  # n_rx x L x 2
    channel: ChannelSpec
    label: int = UNLABELED

    @property
    def L(self) -> int:
        return self.rx_iq.shape[1]

    @property
    def snr_db(self) -> float:
        return self.channel.snr_db

    @property
    def n_tx(self) -> int:
        return self.channel.n_tx

    @property
    def n_rx(self) -> int:
        return self.channel.n_rx

    def stacked(self) -> np.ndarray:
        """All antenna streams as one (n_rx + n_tx) x L x 2 array, TX first."""
        if self.tx_iq is None:
            raise ContractError(f"record {self.id} has no transmit streams")
        return np.concatenate([self.tx_iq, self.rx_iq], axis=0)

    def blind(self) -> "SignalRecord":
        return replace(self, tx_iq=None)

    def unlabeled(self) -> "SignalRecord":
        return replace(self, label=UNLABELED)


@dataclass
class ModulationParams:
    """Waveform settings shared by all schemes.

    ``fsk_spacing`` is the tone spacing in cycles/sample; ``None`` means the
    orthogonal spacing 1/sps, shrunk when needed so every tone stays below
    Nyquist.
    """

    sps: int = 8
    fsk_spacing: float | None = None
    amplitude: float = 1.0


# ---------------------------------------------------------------------------
# constellations


def _gray(i: np.ndarray | int):
    return i ^ (i >> 1)


def _pam_levels(m: int) -> np.ndarray:
    """Gray-labelled equispaced levels: out[label] = level."""
    pos = np.arange(m)
    out = np.empty(m)
    out[_gray(pos)] = 2 * pos - (m - 1)
    return out


def _unit_power(points: np.ndarray) -> np.ndarray:
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


def constellation(scheme: str) -> np.ndarray:
    """Complex symbol table indexed by the integer value of a bit group."""
    if scheme not in BITS_PER_SYMBOL:
        raise ContractError(f"unknown modulation scheme {scheme!r}")
    if scheme.endswith("FSK"):
        raise ContractError("FSK has no constellation; it emits tones")
    m = 2 ** BITS_PER_SYMBOL[scheme]
    if scheme.endswith("PSK"):
        pos = np.arange(m)
        pts = np.empty(m, dtype=complex)
        pts[_gray(pos)] = np.exp(2j * np.pi * pos / m)
        pts.real[np.abs(pts.real) < 1e-15] = 0.0
        pts.imag[np.abs(pts.imag) < 1e-15] = 0.0
        return pts
    if scheme.endswith("ASK"):
        pos = np.arange(m)
        amps = np.empty(m)
        amps[_gray(pos)] = pos
        return _unit_power(amps.astype(complex))
    if scheme == "32QAM":
        # cross constellation: 6x6 grid minus corners, labelled row-major
        lv = np.array([-5, -3, -1, 1, 3, 5])
        pts = [complex(i, q) for q in lv[::-1] for i in lv
               if not (abs(i) == 5 and abs(q) == 5)]
        return _unit_power(np.array(pts))
    half = BITS_PER_SYMBOL[scheme] // 2
    lv = _pam_levels(2 ** half)
    sym = np.arange(m)
    return _unit_power(lv[sym >> half] + 1j * lv[sym & (2 ** half - 1)])


def fsk_frequencies(scheme: str, params: ModulationParams = ModulationParams()) -> np.ndarray:
    """Tone frequency (cycles/sample) for each bit-group value."""
    m = 2 ** BITS_PER_SYMBOL[scheme]
    spacing = params.fsk_spacing if params.fsk_spacing is not None else 1.0 / params.sps
    if (m - 1) / 2 * spacing >= 0.5:
        spacing = 0.9 / (m - 1)
    pos = np.arange(m)
    freqs = np.empty(m)
    freqs[_gray(pos)] = (pos - (m - 1) / 2) * spacing
    return freqs


def _symbols_from_bits(bits: np.ndarray, k: int, n_sym: int) -> np.ndarray:
    groups = bits[: n_sym * k].reshape(n_sym, k)
    return groups @ (1 << np.arange(k - 1, -1, -1))


def modulate(bits: Sequence[int], scheme: str, sps: int = 8, L: int = 1024,
             params: ModulationParams | None = None) -> np.ndarray:
    """Complex baseband waveform of length ``L`` with rectangular pulses."""
    if scheme not in BITS_PER_SYMBOL:
        raise ContractError(f"unknown modulation scheme {scheme!r}")
    if L % sps:
        raise ShapeError(f"L={L} is not divisible by sps={sps}")
    params = params or ModulationParams(sps=sps)
    k = BITS_PER_SYMBOL[scheme]
    n_sym = L // sps
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size < n_sym * k:
        raise ContractError(f"{scheme} needs {n_sym * k} bits for L={L}, got {bits.size}")
    sym = _symbols_from_bits(bits, k, n_sym)
    if scheme.endswith("FSK"):
        f = np.repeat(fsk_frequencies(scheme, replace(params, sps=sps))[sym], sps)
        phase = 2 * np.pi * np.concatenate([[0.0], np.cumsum(f)[:-1]])
        return params.amplitude * np.exp(1j * phase)
    return params.amplitude * np.repeat(constellation(scheme)[sym], sps)


# ---------------------------------------------------------------------------
# channel


def draw_channel(n_tx: int, n_rx: int, rng: np.random.Generator, fading: str = "rayleigh",
                 k_factor: float = 4.0) -> np.ndarray:
    """Flat-fading matrix with unit-variance entries."""
    scatter = (rng.normal(size=(n_rx, n_tx)) + 1j * rng.normal(size=(n_rx, n_tx))) / np.sqrt(2)
    if fading == "rayleigh":
        return scatter
    if fading == "rician":
        los = np.exp(2j * np.pi * rng.random((n_rx, n_tx)))
        return np.sqrt(k_factor / (k_factor + 1)) * los + np.sqrt(1 / (k_factor + 1)) * scatter
    raise ContractError(f"unknown fading model {fading!r}")


def apply_channel(x: np.ndarray, spec: ChannelSpec, rng: np.random.Generator) -> np.ndarray:
    """y = H x + n, noise power per stream = mean received power / 10^(snr/10)."""
    x = np.atleast_2d(x)
    if x.shape[0] != spec.n_tx:
        raise ShapeError(f"signal has {x.shape[0]} streams but channel expects n_tx={spec.n_tx}")
    H = spec.H if spec.H is not None else np.eye(spec.n_rx, spec.n_tx)
    if H.shape != (spec.n_rx, spec.n_tx):
        raise ShapeError(f"H has shape {H.shape}, expected {(spec.n_rx, spec.n_tx)}")
    clean = H @ x
    noise_var = np.mean(np.abs(clean) ** 2) / 10 ** (spec.snr_db / 10)
    noise = rng.normal(size=clean.shape) + 1j * rng.normal(size=clean.shape)
    return clean + np.sqrt(noise_var / 2) * noise


def to_iq(z: np.ndarray) -> np.ndarray:
    """complex (..., L) -> real (..., L, 2)"""
    return np.stack([z.real, z.imag], axis=-1)


def from_iq(iq: np.ndarray) -> np.ndarray:
    return iq[..., 0] + 1j * iq[..., 1]


# ---------------------------------------------------------------------------
# datasets


@dataclass
class DatasetConfig:
    schemes: list[str] = field(default_factory=lambda: list(SCHEMES))
    samples_per_class: int = 100  # per scheme and geometry
    snr_grid: list[float] = field(default_factory=lambda: [float(s) for s in range(-20, 21, 2)])
    snr_mode: str = "grid"  # "grid": cycle through snr_grid; "uniform": continuous draw
    snr_range: tuple[float, float] = (-20.0, 20.0)
    geometries: list[tuple[int, int]] = field(default_factory=lambda: [(1, 1)])  # (n_tx, n_rx)
    L: int = 1024
    sps: int = 8
    fading: str = "rayleigh"
    k_factor: float = 4.0
    fsk_spacing: float | None = None

    def validate(self) -> None:
        if self.samples_per_class <= 0:
            raise ContractError("samples_per_class must be positive")
        for s in self.schemes:
            if s not in CLASS_ID:
                raise ContractError(f"unknown modulation scheme {s!r}")
        if self.snr_mode not in ("grid", "uniform"):
            raise ContractError(f"unknown snr_mode {self.snr_mode!r}")
        if self.snr_mode == "grid" and not self.snr_grid:
            raise ContractError("snr_grid is empty")
        for g in self.geometries:
            if len(g) != 2 or min(g) < 1:
                raise ContractError(f"bad geometry {g!r}")


def record_rng(seed: int, record_id: int) -> np.random.Generator:
    """Independent stream per record so serial and parallel generation agree."""
    return np.random.default_rng([seed, record_id])


def generate_record(record_id: int, scheme: str, n_tx: int, n_rx: int, snr_db: float,
                    seed: int, cfg: DatasetConfig) -> SignalRecord:
    rng = record_rng(seed, record_id)
    k = BITS_PER_SYMBOL[scheme]
    n_bits = (cfg.L // cfg.sps) * k
    params = ModulationParams(sps=cfg.sps, fsk_spacing=cfg.fsk_spacing)
    tx = np.stack([modulate(rng.integers(0, 2, n_bits), scheme, cfg.sps, cfg.L, params)
                   for _ in range(n_tx)])
    if scheme.endswith("FSK"):
        tx = tx * np.exp(2j * np.pi * rng.random((n_tx, 1)))  # random initial tone phase
    H = draw_channel(n_tx, n_rx, rng, cfg.fading, cfg.k_factor)
    spec = ChannelSpec(n_tx, n_rx, H, float(snr_db), cfg.fading)
    rx = apply_channel(tx, spec, rng)
    return SignalRecord(record_id, to_iq(tx), to_iq(rx), spec, CLASS_ID[scheme])


def generate_records(cfg: DatasetConfig, seed: int) -> list[SignalRecord]:
    """Deterministic, shuffled list of records for ``cfg``."""
    cfg.validate()
    plan = []
    rid = 0
    snr_rng = np.random.default_rng([seed, 0x5A5])
    for n_tx, n_rx in cfg.geometries:
        for scheme in cfg.schemes:
            for i in range(cfg.samples_per_class):
                if cfg.snr_mode == "grid":
                    snr = cfg.snr_grid[i % len(cfg.snr_grid)]
                else:
                    snr = float(snr_rng.uniform(*cfg.snr_range))
                plan.append((rid, scheme, n_tx, n_rx, snr))
                rid += 1
    order = np.random.default_rng(seed).permutation(len(plan))
    return [generate_record(*plan[j], seed=seed, cfg=cfg) for j in order]


def generate_dataset(cfg: DatasetConfig, seed: int, out_dir: str | Path | None = None
                     ) -> list[SignalRecord]:
    """Generate records and, when ``out_dir`` is given, write them to disk."""
    records = generate_records(cfg, seed)
    if out_dir is not None:
        from .dataio import save_dataset

        save_dataset(out_dir, records)
    return records
