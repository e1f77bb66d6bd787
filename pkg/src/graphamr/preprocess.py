"""Per-stream cleanup: interpolate, min-max normalize, mean filter, Haar denoise."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError
from .siggen import SignalRecord


@dataclass(frozen=True)
class PreprocessConfig:
    target_length: int = 1024
    mean_filter_window: int = 5
    wavelet_levels: int = 1
    threshold_rule: str = "universal"

    def __post_init__(self):
        if self.mean_filter_window < 1 or self.mean_filter_window % 2 == 0:
            raise ContractError(f"mean_filter_window must be odd and >= 1, got {self.mean_filter_window}")
        if self.target_length < 2:
            raise ContractError("target_length must be at least 2")
        if self.wavelet_levels != 1:
            raise ContractError("only single-level wavelet denoising is supported")
        if self.threshold_rule != "universal":
            raise ContractError(f"unknown threshold rule {self.threshold_rule!r}")


def resample_linear(x: np.ndarray, L: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ContractError(f"need at least 2 samples to interpolate, got {n}")
    if n == L:
        return x.copy()
    return np.interp(np.linspace(0.0, n - 1, L), np.arange(n), x)


def minmax_normalize(x: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a constant sequence maps to 0.5 everywhere."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full_like(x, 0.5)
    return (x - lo) / (hi - lo)


def mean_filter(x: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average with edge replication."""
    if window < 1 or window % 2 == 0:
        raise ContractError(f"mean filter window must be odd, got {window}")
    x = np.asarray(x, dtype=np.float64)
    if window == 1:
        return x.copy()
    half = window // 2
    padded = np.pad(x, half, mode="edge")
    c = np.concatenate([[0.0], np.cumsum(padded)])
    return (c[window:] - c[:-window]) / window


def universal_threshold(detail: np.ndarray, n: int) -> float:
    sigma = np.median(np.abs(detail)) / 0.6745
    return float(sigma * np.sqrt(2.0 * np.log(n))) if n > 1 else 0.0


def wavelet_denoise(x: np.ndarray) -> np.ndarray:
    """Single-level Haar transform with soft-thresholded details."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise ContractError("wavelet_denoise of an empty sequence")
    if n == 1:
        return x.copy()
    work = np.concatenate([x, x[-2:-1]]) if n % 2 else x  # reflect one sample
    even, odd = work[0::2], work[1::2]
    approx = (even + odd) / np.sqrt(2.0)
    detail = (even - odd) / np.sqrt(2.0)
    thr = universal_threshold(detail, n)
    detail = np.sign(detail) * np.maximum(np.abs(detail) - thr, 0.0)
    out = np.empty_like(work)
    out[0::2] = (approx + detail) / np.sqrt(2.0)
    out[1::2] = (approx - detail) / np.sqrt(2.0)
    return out[:n]


def preprocess_stream(iq: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    """One antenna's (n, 2) IQ samples -> (L, 2).

    I and Q share one min-max scale so their relative amplitude survives.
    """
    L = cfg.target_length
    i = resample_linear(iq[:, 0], L)
    q = resample_linear(iq[:, 1], L)
    both = minmax_normalize(np.concatenate([i, q]))
    i, q = both[:L], both[L:]
    i = wavelet_denoise(mean_filter(i, cfg.mean_filter_window))
    q = wavelet_denoise(mean_filter(q, cfg.mean_filter_window))
    return np.stack([i, q], axis=-1)


def _streams(arr: np.ndarray | None, cfg: PreprocessConfig) -> np.ndarray | None:
    if arr is None:
        return None
    return np.stack([preprocess_stream(s, cfg) for s in arr])


def preprocess_record(rec: SignalRecord, cfg: PreprocessConfig = PreprocessConfig()) -> SignalRecord:
    return replace(rec, tx_iq=_streams(rec.tx_iq, cfg), rx_iq=_streams(rec.rx_iq, cfg))


def preprocess_records(records, cfg: PreprocessConfig = PreprocessConfig()) -> list[SignalRecord]:
    return [preprocess_record(r, cfg) for r in records]
