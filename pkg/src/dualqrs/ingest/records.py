"""In-memory record and annotation types shared by every reader."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# MIT annotation code -> mnemonic (WFDB ecgcodes.h)
ANNOTATION_SYMBOLS = {
    0: " ", 1: "N", 2: "L", 3: "R", 4: "a", 5: "V", 6: "F", 7: "J", 8: "A", 9: "S",
    10: "E", 11: "j", 12: "/", 13: "Q", 14: "~", 16: "|", 18: "s", 19: "T", 20: "*",
    21: "D", 22: '"', 23: "=", 24: "p", 25: "B", 26: "^", 27: "t", 28: "+", 29: "u",
    30: "?", 31: "!", 32: "[", 33: "]", 34: "e", 35: "n", 36: "@", 37: "x", 38: "f",
    39: "(", 40: ")", 41: "r",
}  # fmt: skip

# Codes counted as QRS complexes: the standard PhysioBank beat-annotation set
# N L R B A a J S V r F e j n E / f Q ?
BEAT_CODES = frozenset({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 25, 30, 34, 35, 38, 41})


@dataclass(frozen=True)
class ChannelInfo:
    name: str
    gain: float  # adu per mV
    adc_zero: int = 0
    baseline: int = 0
    units: str = "mV"


@dataclass(frozen=True)
class EcgRecord:
    record_id: str
    sampling_rate_hz: float
    channels: tuple[ChannelInfo, ...]
    samples: np.ndarray  # (n_channels, n_samples)

    def __post_init__(self):
        samples = np.array(self.samples)
        if samples.ndim != 2:
            raise ValueError("samples must be (n_channels, n_samples)")
        if samples.shape[0] != len(self.channels):
            raise ValueError(
                f"{samples.shape[0]} sample rows for {len(self.channels)} channel descriptors"
            )
        if not self.sampling_rate_hz > 0:
            raise ValueError(f"sampling rate must be positive, got {self.sampling_rate_hz}")
        for ch in self.channels:
            if ch.gain == 0:
                raise ValueError(f"channel {ch.name!r} has zero gain")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sampling_rate_hz

    def channel_mv(self, index: int = 0) -> np.ndarray:
        """Physical signal of one channel: ``(adu - baseline) / gain``."""
        ch = self.channels[index]
        return (self.samples[index].astype(np.float64) - ch.baseline) / ch.gain


@dataclass(frozen=True)
class OtherAnnotation:
    sample: int
    code: int
    aux: str = ""
    subtype: int = 0
    chan: int = 0
    num: int = 0

    @property
    def symbol(self) -> str:
        return ANNOTATION_SYMBOLS.get(self.code, f"[{self.code}]")


@dataclass(frozen=True)
class AnnotationSet:
    """Beat annotations (R-peak indices + codes); everything else sits in ``other``."""

    record_id: str
    samples: np.ndarray
    codes: np.ndarray
    other: tuple[OtherAnnotation, ...] = field(default=())

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.int64).reshape(-1)
        codes = np.asarray(self.codes, dtype=np.int64).reshape(-1)
        if samples.shape != codes.shape:
            raise ValueError("samples and codes must have equal length")
        if samples.size and (samples[0] < 0 or np.any(np.diff(samples) <= 0)):
            raise ValueError(f"record {self.record_id}: beat indices must be non-negative and strictly increasing")
        samples.setflags(write=False)
        codes.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "other", tuple(self.other))

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def symbols(self) -> list[str]:
        return [ANNOTATION_SYMBOLS.get(int(c), f"[{int(c)}]") for c in self.codes]

    def check_within(self, n_samples: int) -> None:
        if self.samples.size and self.samples[-1] >= n_samples:
            raise ValueError(
                f"record {self.record_id}: annotation at {self.samples[-1]} beyond {n_samples} samples"
            )

    def window(self, start: int, stop: int) -> np.ndarray:
        """Beat indices in ``[start, stop)``."""
        lo, hi = np.searchsorted(self.samples, [start, stop])
        return self.samples[lo:hi]
