"""Turn a per-sample R-peak probability sequence into peak indices.

Three rules, applied in order:

1. screening: every contiguous run above ``screening_threshold`` contributes
   its maximum (leftmost on ties) as a candidate;
2. search-back: an RR gap of at least ``searchback_rr_factor`` times the mean
   candidate RR is rescanned with the threshold scaled by
   ``searchback_threshold_factor``, skipping the refractory zone next to
   each flanking candidate;
3. refractory: while two neighbours are closer than ``refractory_ms`` the
   less probable one is dropped (the earlier one survives a tie).

``pick`` is the vectorized version; ``pick_oracle`` restates the rules with
plain loops and exists to cross-check it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class PickerConfig:
    screening_threshold: float = 0.1
    searchback_rr_factor: float = 1.5
    searchback_threshold_factor: float = 0.5
    refractory_ms: float = 200.0

    def validate(self) -> "PickerConfig":
        if not 0.0 < self.screening_threshold < 1.0:
            raise ValueError("screening_threshold must lie in (0, 1)")
        if not (self.searchback_rr_factor > 0 and self.searchback_threshold_factor > 0):
            raise ValueError("search-back factors must be positive")
        if not self.refractory_ms > 0:
            raise ValueError("refractory_ms must be positive")
        return self

    def refractory_samples(self, fs: float) -> int:
        return int(np.floor(self.refractory_ms * fs / 1000.0 + 1e-9))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PeakList:
    indices: np.ndarray
    probabilities: np.ndarray

    def __len__(self) -> int:
        return int(self.indices.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PeakList):
            return NotImplemented
        return np.array_equal(self.indices, other.indices) and np.array_equal(
            self.probabilities, other.probabilities
        )

    @classmethod
    def empty(cls) -> "PeakList":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0))

    def shifted(self, offset: int) -> "PeakList":
        return PeakList(self.indices + offset, self.probabilities)


# ----------------------------------------------------------------------------
# optimized


def _region_maxima(p: np.ndarray, threshold: float, lo: int = 0, hi: int | None = None) -> np.ndarray:
    """Argmax of each run where p > threshold inside [lo, hi)."""
    hi = p.size if hi is None else hi
    if hi <= lo:
        return np.zeros(0, dtype=np.int64)
    seg = p[lo:hi]
    above = seg > threshold
    if not above.any():
        return np.zeros(0, dtype=np.int64)
    edges = np.diff(np.concatenate([[0], above.view(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    # np.maximum.reduceat gives each run's max; first position equal to it is the leftmost argmax
    run_max = np.maximum.reduceat(seg, starts)
    out = np.empty(starts.size, dtype=np.int64)
    for k, (a, b) in enumerate(zip(starts, stops)):
        out[k] = a + int(np.flatnonzero(seg[a:b] == run_max[k])[0])
    return out + lo


def _enforce_refractory(idx: np.ndarray, p: np.ndarray, min_gap: int) -> np.ndarray:
    kept: list[int] = []
    for c in idx:
        survive = True
        while kept and c - kept[-1] < min_gap:
            if p[c] > p[kept[-1]]:
                kept.pop()
            else:
                survive = False
                break
        if survive:
            kept.append(int(c))
    return np.asarray(kept, dtype=np.int64)


def pick(probabilities: np.ndarray, fs: float, config: PickerConfig | None = None) -> PeakList:
    cfg = (config or PickerConfig()).validate()
    p = np.asarray(probabilities, dtype=np.float64).ravel()
    if p.size == 0:
        return PeakList.empty()
    refr = cfg.refractory_samples(fs)
    cand = _region_maxima(p, cfg.screening_threshold)
    if cand.size >= 2:
        gaps = np.diff(cand)
        mean_rr = gaps.mean()
        low_thr = cfg.screening_threshold * cfg.searchback_threshold_factor
        extra = [
            _region_maxima(p, low_thr, int(a) + refr, int(b) - refr + 1)
            for a, b, g in zip(cand[:-1], cand[1:], gaps)
            if g >= cfg.searchback_rr_factor * mean_rr
        ]
        if extra:
            cand = np.unique(np.concatenate([cand, *extra]))
    final = _enforce_refractory(cand, p, refr)
    return PeakList(final, p[final])


# ----------------------------------------------------------------------------
# reference


def _oracle_regions(p, threshold, lo, hi):
    found = []
    i = lo
    while i < hi:
        if p[i] > threshold:
            best = i
            j = i
            while j < hi and p[j] > threshold:
                if p[j] > p[best]:
                    best = j
                j += 1
            found.append(best)
            i = j
        else:
            i += 1
    return found


def pick_oracle(probabilities, fs: float, config: PickerConfig | None = None) -> PeakList:
    cfg = (config or PickerConfig()).validate()
    p = [float(v) for v in np.asarray(probabilities, dtype=np.float64).ravel()]
    n = len(p)
    if n == 0:
        return PeakList.empty()
    refr = cfg.refractory_samples(fs)

    cands = _oracle_regions(p, cfg.screening_threshold, 0, n)

    if len(cands) >= 2:
        total = 0
        for k in range(len(cands) - 1):
            total += cands[k + 1] - cands[k]
        mean_rr = total / (len(cands) - 1)
        low = cfg.screening_threshold * cfg.searchback_threshold_factor
        added = []
        for k in range(len(cands) - 1):
            a, b = cands[k], cands[k + 1]
            if b - a >= cfg.searchback_rr_factor * mean_rr:
                # strictly inside (a, b), at least refr away from both flanks
                added.extend(_oracle_regions(p, low, a + refr, min(b - refr + 1, n)))
        cands = sorted(set(cands) | set(added))

    peaks = list(cands)
    changed = True
    while changed:
        changed = False
        for k in range(len(peaks) - 1):
            a, b = peaks[k], peaks[k + 1]
            if b - a < refr:
                if p[b] > p[a]:
                    del peaks[k]
                else:
                    del peaks[k + 1]
                changed = True
                break
    return PeakList(np.array(peaks, dtype=np.int64), np.array([p[i] for i in peaks], dtype=np.float64))


# ----------------------------------------------------------------------------
# fuzzing corpus


def fuzz_sequence(rng: np.random.Generator, fs: float = 360.0) -> np.ndarray:
    """Random piecewise-smooth probability trace that exercises every rule.

    Mixes regular beats, sub-threshold beats inside long gaps, close pairs
    inside the refractory window, quantized plateaus (ties) and background
    noise that sometimes crosses the screening threshold.
    """
    n = int(rng.integers(0, int(12 * fs)))
    p = np.zeros(n)
    if n == 0:
        return p
    t = np.arange(n)
    rr = rng.uniform(0.3, 1.5) * fs
    pos = rng.uniform(0, rr)
    while pos < n:
        kind = rng.random()
        if kind < 0.15:
            height = rng.uniform(0.05, 0.1)  # only the lowered threshold sees it
        elif kind < 0.2:
            pos += rr  # dropped beat, long gap
            continue
        else:
            height = rng.uniform(0.1, 1.0)
        width = rng.uniform(1.0, 12.0)
        p = np.maximum(p, height * np.exp(-0.5 * ((t - pos) / width) ** 2))
        if rng.random() < 0.15:
            off = rng.uniform(5, 0.25 * fs)  # neighbour inside the refractory window
            p = np.maximum(p, rng.uniform(0.1, 1.0) * np.exp(-0.5 * ((t - pos - off) / width) ** 2))
        pos += rr * rng.uniform(0.8, 1.2)
    if rng.random() < 0.5:
        p = p + rng.uniform(0.0, 0.12) * rng.random(n) ** 4
    if rng.random() < 0.3:
        p = np.round(p * 20) / 20  # plateaus with exact ties
    return np.clip(p, 0.0, 1.0)


def fuzz_compare(count: int = 1000, seed: int = 0, fs: float = 360.0, config: PickerConfig | None = None):
    """Return (number of sequences, list of mismatching sequence ids)."""
    bad = []
    for k in range(count):
        x = fuzz_sequence(np.random.default_rng([seed, k]), fs)
        if pick(x, fs, config) != pick_oracle(x, fs, config):
            bad.append(k)
    return count, bad
