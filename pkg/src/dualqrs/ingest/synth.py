"""Synthetic ECG with exact R-peak ground truth.

Each beat is a sum of Gaussian bumps (P, Q, R, S, T) placed on the sample
grid; baseline wander, powerline interference and white noise are added on
top. Wave offsets scale with sqrt(RR) so T waves stay inside the cycle at
high rates.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .records import AnnotationSet, ChannelInfo, EcgRecord

NORMAL_BEAT = 1


@dataclass
class SynthConfig:
    duration_s: float = 10.0
    heart_rate_bpm: float = 72.0
    rr_jitter_fraction: float = 0.0
    qrs_amplitude_mv: float = 1.0
    p_t_amplitudes_mv: tuple[float, float] = (0.1, 0.25)
    baseline_wander: tuple[float, float] = (0.0, 0.3)  # amplitude mV, frequency Hz
    powerline: tuple[float, float] = (0.0, 60.0)
    white_noise_std: float = 0.0
    invert_polarity: bool = False
    rng_seed: int = 0
    fs: float = 360.0
    record_id: str = "synthetic"

    def validate(self) -> "SynthConfig":
        if not self.duration_s > 0:
            raise ValueError("duration_s must be positive")
        if not 20.0 <= self.heart_rate_bpm <= 300.0:
            raise ValueError("heart_rate_bpm must lie in [20, 300]")
        if not 0.0 <= self.rr_jitter_fraction < 1.0:
            raise ValueError("rr_jitter_fraction must lie in [0, 1)")
        if not self.fs > 0:
            raise ValueError("fs must be positive")
        amps = [
            self.qrs_amplitude_mv,
            *self.p_t_amplitudes_mv,
            self.baseline_wander[0],
            self.powerline[0],
            self.white_noise_std,
        ]
        if min(amps) < 0:
            raise ValueError("amplitudes and noise levels must be non-negative")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        for key in ("p_t_amplitudes_mv", "baseline_wander", "powerline"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "SynthConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class SynthParts:
    clean: np.ndarray
    baseline: np.ndarray
    powerline: np.ndarray
    noise: np.ndarray
    r_peaks: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def total(self) -> np.ndarray:
        return self.clean + self.baseline + self.powerline + self.noise


def _beat_centers(cfg: SynthConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    rr = 60.0 / cfg.heart_rate_bpm
    centers = []
    t = rr / 2.0
    while True:
        c = int(round(t * cfg.fs))
        if c >= n:
            break
        centers.append(c)
        jitter = cfg.rr_jitter_fraction * rng.uniform(-1.0, 1.0) if cfg.rr_jitter_fraction else 0.0
        t += rr * (1.0 + jitter)
    return np.asarray(centers, dtype=np.int64)


def synthesize_components(cfg: SynthConfig) -> SynthParts:
    cfg.validate()
    rng = np.random.default_rng(cfg.rng_seed)
    n = int(round(cfg.duration_s * cfg.fs))
    fs = cfg.fs
    centers = _beat_centers(cfg, n, rng)
    rr = 60.0 / cfg.heart_rate_bpm
    scale = np.sqrt(np.clip(rr, 0.3, 1.5))
    qrs = cfg.qrs_amplitude_mv
    p_amp, t_amp = cfg.p_t_amplitudes_mv
    # (amplitude mV, offset s, width s)
    waves = [
        (p_amp, -0.18 * scale, 0.025),
        (-0.10 * qrs, -0.025, 0.008),
        (qrs, 0.0, 0.010),
        (-0.15 * qrs, 0.025, 0.008),
        (t_amp, 0.30 * scale, 0.050),
    ]
    clean = np.zeros(n)
    half = int(0.7 * fs)
    for c in centers:
        lo, hi = max(0, c - half), min(n, c + half + 1)
        dt = (np.arange(lo, hi) - c) / fs
        for amp, off, width in waves:
            if amp:
                clean[lo:hi] += amp * np.exp(-0.5 * ((dt - off) / width) ** 2)
    t = np.arange(n) / fs
    wa, wf = cfg.baseline_wander
    pa, pf = cfg.powerline
    baseline = wa * np.sin(2 * np.pi * wf * t + rng.uniform(0, 2 * np.pi)) if wa else np.zeros(n)
    power = pa * np.sin(2 * np.pi * pf * t + rng.uniform(0, 2 * np.pi)) if pa else np.zeros(n)
    noise = rng.normal(0.0, cfg.white_noise_std, n) if cfg.white_noise_std else np.zeros(n)
    sign = -1.0 if cfg.invert_polarity else 1.0
    return SynthParts(sign * clean, sign * baseline, sign * power, sign * noise, centers)


def synthesize_ecg(cfg: SynthConfig) -> tuple[EcgRecord, AnnotationSet]:
    parts = synthesize_components(cfg)
    record = EcgRecord(cfg.record_id, cfg.fs, (ChannelInfo("synthetic", gain=1.0),), parts.total[None, :])
    ann = AnnotationSet(cfg.record_id, parts.r_peaks, np.full(parts.r_peaks.size, NORMAL_BEAT))
    return record, ann
