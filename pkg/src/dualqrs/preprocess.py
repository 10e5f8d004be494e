"""Baseline removal by cascaded moving means and db4 wavelet soft-threshold denoising.

The DWT uses the "full convolution then keep odd samples" convention with
half-sample symmetric extension, so coefficient arrays have length
``floor((N + F - 1) / 2)`` per level, F = 8 for db4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Daubechies-4 (8 taps) analysis lowpass
DB4_DEC_LO = np.array(
    [
        -0.010597401785069032,
        0.0328830116668852,
        0.030841381835560764,
        -0.18703481171909309,
        -0.027983769416859854,
        0.6308807679298589,
        0.7148465705529157,
        0.2303778133088965,
    ]
)
# quadrature-mirror highpass: h[k] = (-1)^(k+1) g[F-1-k]
DB4_DEC_HI = np.array([(-1) ** (k + 1) * DB4_DEC_LO[7 - k] for k in range(8)])
DB4_REC_LO = DB4_DEC_LO[::-1].copy()
DB4_REC_HI = DB4_DEC_HI[::-1].copy()

WAVELETS = {"db4": (DB4_DEC_LO, DB4_DEC_HI, DB4_REC_LO, DB4_REC_HI)}
MAD_TO_SIGMA = 0.6745


@dataclass
class DwtDecomposition:
    approximation: np.ndarray
    details: list[np.ndarray]  # details[0] is level 1 (finest)
    original_length: int
    wavelet: str = "db4"
    boundary_mode: str = "symmetric"

    @property
    def levels(self) -> int:
        return len(self.details)


@dataclass
class DenoiseConfig:
    wavelet: str = "db4"
    levels: int = 5
    threshold_rule: str = "universal"
    baseline_windows_ms: tuple[int, int] = field(default=(200, 600))

    def validate(self) -> "DenoiseConfig":
        if self.wavelet not in WAVELETS:
            raise ValueError(f"unsupported wavelet {self.wavelet!r}")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.threshold_rule != "universal":
            raise ValueError(f"unsupported threshold rule {self.threshold_rule!r}")
        if min(self.baseline_windows_ms) <= 0:
            raise ValueError("baseline windows must be positive")
        return self


# ----------------------------------------------------------------------------
# baseline


def window_samples(ms: float, fs: float) -> int:
    """Window length in samples, rounded and forced odd so the mean is centered."""
    n = max(1, int(round(ms * fs / 1000.0)))
    return n if n % 2 else n + 1


def moving_mean(x: np.ndarray, width: int) -> np.ndarray:
    """Centered moving mean of odd ``width`` with edge-replicated padding."""
    half = width // 2
    xp = np.concatenate([np.full(half, x[0]), x, np.full(half, x[-1])])
    c = np.concatenate([[0.0], np.cumsum(xp)])
    return (c[width:] - c[:-width]) / width


def remove_baseline(signal: np.ndarray, fs: float, windows_ms=(200, 600)) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64)
    if x.size == 0:
        raise ValueError("signal is empty")
    if not fs > 0:
        raise ValueError("fs must be positive")
    estimate = x
    for ms in windows_ms:
        w = window_samples(ms, fs)
        if w > x.size:
            raise ValueError(f"window exceeds signal ({w} > {x.size} samples)")
        estimate = moving_mean(estimate, w)
    return x - estimate


# ----------------------------------------------------------------------------
# DWT


def _symmetric_extend(x: np.ndarray, n: int) -> np.ndarray:
    """Half-sample symmetric extension by ``n`` on each side (repeats as needed)."""
    if n == 0:
        return x
    idx = np.arange(-n, x.size + n)
    period = 2 * x.size
    idx = np.mod(idx, period)
    idx = np.where(idx >= x.size, period - 1 - idx, idx)
    return x[idx]


def _analysis(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    f = lo.size
    xe = _symmetric_extend(x, f - 1)
    out_len = (x.size + f - 1) // 2
    # full convolution, then keep samples f-1+1, f-1+3, ... -> indices into the valid region
    ca = np.convolve(xe, lo, mode="valid")  # length N + F - 1
    cd = np.convolve(xe, hi, mode="valid")
    return ca[1::2][:out_len], cd[1::2][:out_len]


def _synthesis(ca: np.ndarray, cd: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    f = lo.size
    n = ca.size
    up_a = np.zeros(2 * n)
    up_d = np.zeros(2 * n)
    up_a[::2] = ca
    up_d[::2] = cd
    full = np.convolve(up_a, lo) + np.convolve(up_d, hi)
    out_len = 2 * n - f + 2
    return full[f - 2 : f - 2 + out_len]


def max_levels(length: int) -> int:
    """Deepest decomposition allowed: every level must still halve real signal support."""
    return int(math.floor(math.log2(length))) if length > 0 else 0


def dwt_forward(
    signal: np.ndarray, wavelet: str = "db4", levels: int = 5, boundary_mode: str = "symmetric"
) -> DwtDecomposition:
    if boundary_mode != "symmetric":
        raise ValueError(f"unsupported boundary mode {boundary_mode!r}")
    lo, hi, _, _ = WAVELETS[wavelet]
    x = np.asarray(signal, dtype=np.float64)
    if x.size < lo.size:
        raise ValueError(f"signal of length {x.size} is shorter than the {lo.size}-tap filter")
    if levels < 1 or levels > max_levels(x.size):
        raise ValueError(f"{levels} levels too deep for length {x.size} (max {max_levels(x.size)})")
    details = []
    a = x
    for _ in range(levels):
        a, d = _analysis(a, lo, hi)
        details.append(d)
    return DwtDecomposition(a, details, x.size, wavelet, boundary_mode)


def dwt_inverse(dec: DwtDecomposition) -> np.ndarray:
    _, _, lo, hi = WAVELETS[dec.wavelet]
    a = dec.approximation
    for d in reversed(dec.details):
        if a.size == d.size + 1:
            a = a[:-1]
        a = _synthesis(a, d, lo, hi)
    return a[: dec.original_length]


# ----------------------------------------------------------------------------
# thresholding


def soft_threshold(coeffs: np.ndarray | float, lam: float) -> np.ndarray:
    if lam < 0:
        raise ValueError("threshold must be non-negative")
    c = np.asarray(coeffs, dtype=np.float64)
    return np.sign(c) * np.maximum(np.abs(c) - lam, 0.0)


def universal_threshold(finest_details: np.ndarray, n: int) -> float:
    sigma = np.median(np.abs(finest_details)) / MAD_TO_SIGMA
    return float(sigma * math.sqrt(2.0 * math.log(n)))


def denoise(signal: np.ndarray, config: DenoiseConfig | None = None) -> np.ndarray:
    """Soft-threshold every detail level with one universal threshold; keep the approximation."""
    cfg = (config or DenoiseConfig()).validate()
    dec = dwt_forward(signal, cfg.wavelet, cfg.levels)
    lam = universal_threshold(dec.details[0], dec.original_length)
    dec.details = [soft_threshold(d, lam) for d in dec.details]
    return dwt_inverse(dec)


def preprocess(signal: np.ndarray, fs: float, config: DenoiseConfig | None = None) -> np.ndarray:
    """Baseline removal followed by wavelet denoising."""
    cfg = (config or DenoiseConfig()).validate()
    return denoise(remove_baseline(signal, fs, cfg.baseline_windows_ms), cfg)
