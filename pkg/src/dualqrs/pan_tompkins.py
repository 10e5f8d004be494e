"""Pan-Tompkins QRS detector (1985 design), used as the classical baseline.

The integer filters are defined at 200 Hz:

    low-pass   y(n) = 2y(n-1) - y(n-2) + x(n) - 2x(n-6) + x(n-12)
    high-pass  y(n) = y(n-1) - x(n)/32 + x(n-16) - x(n-17) + x(n-32)/32
    derivative y(n) = (2x(n) + x(n-1) - x(n-3) - 2x(n-4)) / 8

followed by squaring and a 150 ms moving-window integral. Both recursions
have exact FIR equivalents (a length-11 triangle and "delayed impulse minus
32-tap mean"), which is what gets computed here; the recursion itself is
kept in ``lowpass_recursive`` / ``highpass_recursive`` for reference.

Thresholding follows the original: running signal/noise peak levels with
1/8 updates (1/4 for search-back hits), THR1 = NPK + (SPK - NPK)/4,
THR2 = THR1/2, two eight-interval RR averages with 92 / 116 / 166 % limits,
a 200 ms refractory period and a slope test for T waves 200-360 ms after a
beat. Inputs at other rates are linearly resampled to 200 Hz and detections
are mapped back and snapped to the raw extremum within +-40 ms.
"""

from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .evaluation import DetectionReport, MatchCounts, match, report
from .picker import PeakList

PT_FS = 200.0
LP_DELAY = 5
HP_DELAY = 16
DERIV_DELAY = 2
LP_GAIN = 36.0


@dataclass
class PtConfig:
    fs: float = 360.0
    lowpass_hz: float = 11.0  # cutoffs of the fixed 200 Hz integer pair, informational
    highpass_hz: float = 5.0
    mwi_window_ms: float = 150.0
    refractory_ms: float = 200.0
    twave_window_ms: float = 360.0
    learning_seconds: float = 2.0
    refine_ms: float = 40.0
    match_window_ms: float = 75.0

    def validate(self) -> "PtConfig":
        if not self.fs > 0:
            raise ValueError("fs must be positive")
        for name in ("mwi_window_ms", "refractory_ms", "twave_window_ms", "learning_seconds", "refine_ms"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.twave_window_ms <= self.refractory_ms:
            raise ValueError("twave_window_ms must exceed refractory_ms")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PtState:
    spki: float = 0.0
    npki: float = 0.0
    spkf: float = 0.0
    npkf: float = 0.0
    thr_i1: float = 0.0
    thr_i2: float = 0.0
    thr_f1: float = 0.0
    thr_f2: float = 0.0
    rr_buffer_recent: deque = field(default_factory=lambda: deque(maxlen=8))
    rr_buffer_limited: deque = field(default_factory=lambda: deque(maxlen=8))
    rr_avg1: Optional[float] = None
    rr_avg2: Optional[float] = None
    rr_low: Optional[float] = None
    rr_high: Optional[float] = None
    rr_missed: Optional[float] = None

    def update_thresholds(self) -> None:
        self.thr_i1 = self.npki + 0.25 * (self.spki - self.npki)
        self.thr_i2 = 0.5 * self.thr_i1
        self.thr_f1 = self.npkf + 0.25 * (self.spkf - self.npkf)
        self.thr_f2 = 0.5 * self.thr_f1

    def add_rr(self, rr: float) -> None:
        if self.rr_avg2 is None:
            # second learning phase: the first interval seeds both averages
            self.rr_buffer_recent.append(rr)
            self.rr_buffer_limited.append(rr)
        else:
            self.rr_buffer_recent.append(rr)
            if self.rr_low < rr < self.rr_high:
                self.rr_buffer_limited.append(rr)
        self.rr_avg1 = float(np.mean(self.rr_buffer_recent))
        self.rr_avg2 = float(np.mean(self.rr_buffer_limited))
        self.rr_low = 0.92 * self.rr_avg2
        self.rr_high = 1.16 * self.rr_avg2
        self.rr_missed = 1.66 * self.rr_avg2

    def snapshot(self, event: str, index: int) -> dict:
        d = {k: v for k, v in vars(self).items() if not isinstance(v, deque)}
        d["rr_buffer_recent"] = list(self.rr_buffer_recent)
        d["rr_buffer_limited"] = list(self.rr_buffer_limited)
        d["event"] = event
        d["index"] = int(index)
        return d


@dataclass
class PtSignals:
    resampled: np.ndarray
    filtered: np.ndarray
    derivative: np.ndarray
    squared: np.ndarray
    integrated: np.ndarray
    fs: float = PT_FS


@dataclass
class PtResult:
    peaks: PeakList
    peaks_200hz: np.ndarray
    trace: list = field(default_factory=list)


# ----------------------------------------------------------------------------
# filters


def lowpass_recursive(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.zeros_like(x)
    xp = lambda k: x[k] if k >= 0 else 0.0
    for n in range(x.size):
        y[n] = 2 * (y[n - 1] if n >= 1 else 0.0) - (y[n - 2] if n >= 2 else 0.0) + x[n] - 2 * xp(n - 6) + xp(n - 12)
    return y


def highpass_recursive(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.zeros_like(x)
    xp = lambda k: x[k] if k >= 0 else 0.0
    for n in range(x.size):
        y[n] = (y[n - 1] if n >= 1 else 0.0) - x[n] / 32 + xp(n - 16) - xp(n - 17) + xp(n - 32) / 32
    return y


LP_TAPS = np.convolve(np.ones(6), np.ones(6))  # 1,2,...,6,...,2,1
HP_TAPS = -np.ones(32) / 32.0
HP_TAPS[16] += 1.0
DERIV_TAPS = np.array([2.0, 1.0, 0.0, -1.0, -2.0]) / 8.0


def _causal(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    return np.convolve(x, taps)[: x.size]


def lowpass(x: np.ndarray) -> np.ndarray:
    return _causal(np.asarray(x, dtype=np.float64), LP_TAPS)


def highpass(x: np.ndarray) -> np.ndarray:
    return _causal(np.asarray(x, dtype=np.float64), HP_TAPS)


def mwi_samples(window_ms: float, fs: float = PT_FS) -> int:
    return max(1, int(round(window_ms * fs / 1000.0)))


def resample_linear(x: np.ndarray, fs_in: float, fs_out: float) -> np.ndarray:
    if fs_in == fs_out:
        return np.asarray(x, dtype=np.float64).copy()
    n_out = int(np.floor((x.size - 1) * fs_out / fs_in)) + 1
    t = np.arange(n_out) * (fs_in / fs_out)
    return np.interp(t, np.arange(x.size), x)


def pt_stages(signal: np.ndarray, fs: float, mwi_window_ms: float = 150.0) -> PtSignals:
    x = np.asarray(signal, dtype=np.float64).ravel()
    r = resample_linear(x, fs, PT_FS)
    width = mwi_samples(mwi_window_ms)
    min_len = LP_TAPS.size + HP_TAPS.size + DERIV_TAPS.size + width
    if r.size < min_len:
        raise ValueError(f"signal too short for the filter cascade ({r.size} < {min_len} samples at 200 Hz)")
    filtered = highpass(lowpass(r) / LP_GAIN)
    deriv = _causal(filtered, DERIV_TAPS)
    sq = deriv**2
    integrated = _causal(sq, np.ones(width) / width)
    return PtSignals(r, filtered, deriv, sq, integrated)


def pt_preprocess(signal: np.ndarray, fs: float, mwi_window_ms: float = 150.0) -> tuple[np.ndarray, np.ndarray]:
    """Band-passed and integrated signals at 200 Hz."""
    s = pt_stages(signal, fs, mwi_window_ms)
    return s.filtered, s.integrated


# ----------------------------------------------------------------------------
# detection


def _local_maxima(y: np.ndarray) -> np.ndarray:
    """First sample of each strict local-maximum plateau."""
    if y.size < 3:
        return np.zeros(0, dtype=np.int64)
    d = np.sign(np.diff(y))
    # carry the last non-zero slope over flat runs so plateaus count once
    nz = np.flatnonzero(d)
    if nz.size == 0:
        return np.zeros(0, dtype=np.int64)
    rises = nz[:-1][(d[nz[:-1]] > 0) & (d[nz[1:]] < 0)]
    return rises + 1


def pt_detect(signal: np.ndarray, fs: float, config: Optional[PtConfig] = None, trace: bool = False) -> PtResult:
    cfg = (config or PtConfig(fs=fs)).validate()
    x = np.asarray(signal, dtype=np.float64).ravel()
    if x.size < cfg.learning_seconds * fs:
        raise ValueError(f"signal shorter than the {cfg.learning_seconds} s learning phase")
    sig = pt_stages(x, fs, cfg.mwi_window_ms)
    integ, filt, deriv = sig.integrated, sig.filtered, sig.derivative
    width = mwi_samples(cfg.mwi_window_ms)
    refr = int(round(cfg.refractory_ms * PT_FS / 1000.0))
    twin = int(round(cfg.twave_window_ms * PT_FS / 1000.0))

    st = PtState()
    learn = max(1, int(cfg.learning_seconds * PT_FS))
    st.spki, st.npki = integ[:learn].max() / 3.0, integ[:learn].mean() / 2.0
    st.spkf, st.npkf = filt[:learn].max() / 3.0, filt[:learn].mean() / 2.0
    st.update_thresholds()
    events: list[dict] = [st.snapshot("init", 0)] if trace else []

    cands = _local_maxima(integ)
    # filtered-signal peak and steepest slope over the integration window ending at each candidate
    def f_peak(n):
        return filt[max(0, n - width) : n + 1].max()

    def slope(n):
        return np.abs(deriv[max(0, n - width) : n + 1]).max()

    beats: list[int] = []
    beat_slopes: list[float] = []
    noise_peaks: list[int] = []  # candidates classified as noise since the last beat

    def accept(n, searchback=False):
        w = 0.25 if searchback else 0.125
        st.spki = w * integ[n] + (1 - w) * st.spki
        st.spkf = w * f_peak(n) + (1 - w) * st.spkf
        if beats:
            st.add_rr(float(n - beats[-1]))
        beats.append(n)
        beat_slopes.append(slope(n))
        noise_peaks.clear()
        st.update_thresholds()
        if trace:
            events.append(st.snapshot("searchback" if searchback else "signal", n))

    def reject(n):
        st.npki = 0.125 * integ[n] + 0.875 * st.npki
        st.npkf = 0.125 * f_peak(n) + 0.875 * st.npkf
        noise_peaks.append(n)
        st.update_thresholds()
        if trace:
            events.append(st.snapshot("noise", n))

    def search_back(upto):
        if not beats or st.rr_missed is None or upto - beats[-1] <= st.rr_missed:
            return
        pool = [m for m in noise_peaks if m - beats[-1] >= refr and integ[m] > st.thr_i2 and f_peak(m) > st.thr_f2]
        if pool:
            accept(max(pool, key=lambda m: (integ[m], -m)), searchback=True)

    for n in cands:
        n = int(n)
        search_back(n)
        if beats and n - beats[-1] < refr:
            continue
        if integ[n] > st.thr_i1 and f_peak(n) > st.thr_f1:
            if beats and n - beats[-1] < twin and slope(n) < 0.5 * beat_slopes[-1]:
                reject(n)  # T wave
            else:
                accept(n)
        else:
            reject(n)
    search_back(integ.size)

    peaks = _map_back(np.asarray(beats, dtype=np.int64), x, fs, cfg)
    return PtResult(peaks, np.asarray(beats, dtype=np.int64), events)


def _map_back(beats_200: np.ndarray, x: np.ndarray, fs: float, cfg: PtConfig) -> PeakList:
    if beats_200.size == 0:
        return PeakList.empty()
    # the band-pass peak sits LP_DELAY + HP_DELAY after the R apex; the
    # integrated peak lags it by up to one window, so look within that span
    width = mwi_samples(cfg.mwi_window_ms)
    half = int(round(cfg.refine_ms * fs / 1000.0))
    refr = int(np.floor(cfg.refractory_ms * fs / 1000.0 + 1e-9))
    out = []
    filt_delay = LP_DELAY + HP_DELAY
    for n in beats_200:
        lo200 = max(0, n - width - filt_delay)
        hi200 = max(lo200 + 1, n - filt_delay + 1)
        guess = (lo200 + hi200) / 2.0 * fs / PT_FS
        span = (hi200 - lo200) / 2.0 * fs / PT_FS + half
        lo, hi = max(0, int(guess - span)), min(x.size, int(guess + span) + 1)
        w = x[lo:hi]
        k = lo + int(np.argmax(np.abs(w - np.median(w))))
        # final snap to the raw extremum within the refinement radius
        lo2, hi2 = max(0, k - half), min(x.size, k + half + 1)
        w2 = x[lo2:hi2]
        out.append(lo2 + int(np.argmax(np.abs(w2 - np.median(w)))))
    idx = []
    for k in out:
        if idx and k - idx[-1] < refr:
            continue
        idx.append(k)
    idx = np.asarray(idx, dtype=np.int64)
    return PeakList(idx, np.ones(idx.size))


# ----------------------------------------------------------------------------
# window-length protocol


@dataclass
class PtRecord:
    record_id: str
    signal: np.ndarray
    fs: float
    references: np.ndarray


DEFAULT_LENGTHS_S = (5.0, 10.0, 20.0, 30.0, 300.0)


def length_label(seconds: float) -> str:
    return f"{seconds / 60:g} min" if seconds >= 60 else f"{seconds:g} s"


def pt_segment_protocol(
    records: Sequence[PtRecord],
    lengths_s: Sequence[float] = DEFAULT_LENGTHS_S,
    config: Optional[PtConfig] = None,
) -> dict[str, DetectionReport]:
    """Run the detector on independent windows of each length and aggregate the counts.

    Trailing windows shorter than the learning phase receive no detections,
    so their reference beats count as misses.
    """
    out: dict[str, DetectionReport] = {}
    if not records:
        return out
    for length in lengths_s:
        per_record = {}
        for rec in records:
            cfg = PtConfig(**{**(config.to_dict() if config else {}), "fs": rec.fs})
            win = int(round(length * rec.fs))
            total = MatchCounts()
            refs = np.asarray(rec.references, dtype=np.int64)
            for start in range(0, rec.signal.size, win):
                stop = min(start + win, rec.signal.size)
                lo, hi = np.searchsorted(refs, [start, stop])
                seg_refs = refs[lo:hi] - start
                chunk = rec.signal[start:stop]
                try:
                    det = pt_detect(chunk, rec.fs, cfg).peaks.indices
                except ValueError:
                    det = np.zeros(0, dtype=np.int64)
                total = total + match(det, seg_refs, rec.fs, cfg.match_window_ms)
            per_record[rec.record_id] = total
        out[length_label(length)] = report(per_record, split=f"pt windows of {length_label(length)}",
                                           metadata={"window_s": length})  # fmt: skip
    return out
