"""Fixed-length windows, z-score normalization, dual-channel inputs, and R-peak targets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import container
from .ingest import AnnotationSet, EcgRecord
from .preprocess import DenoiseConfig, preprocess

# AAMI subject-oriented split of MIT-BIH (records 102, 104, 107, 217 are paced)
AAMI_TRAIN = (
    "101", "106", "108", "109", "112", "114", "115", "116", "118", "119", "122",
    "124", "201", "203", "205", "207", "208", "209", "215", "220", "223", "230",
)  # fmt: skip
AAMI_TEST = (
    "100", "103", "105", "111", "113", "117", "121", "123", "200", "202", "210",
    "212", "213", "214", "219", "221", "222", "228", "231", "232", "233", "234",
)  # fmt: skip
PACED = ("102", "104", "107", "217")

ARCHIVE_FILE = "segments.bin"
MANIFEST_FILE = "manifest.json"
ARCHIVE_VERSION = 1


@dataclass
class LabelConfig:
    mode: str = "smooth"
    sigma_samples: float = 5.0
    overlap_rule: str = "max"

    def validate(self) -> "LabelConfig":
        if self.mode not in ("smooth", "binary"):
            raise ValueError(f"label mode must be 'smooth' or 'binary', got {self.mode!r}")
        if not self.sigma_samples > 0:
            raise ValueError("sigma_samples must be positive")
        if self.overlap_rule != "max":
            raise ValueError("only the elementwise 'max' overlap rule is supported")
        return self


@dataclass
class SplitSpec:
    train_ids: tuple[str, ...] = AAMI_TRAIN
    test_ids: tuple[str, ...] = AAMI_TEST
    excluded_ids: tuple[str, ...] = PACED

    def validate(self) -> "SplitSpec":
        train, test, excl = set(self.train_ids), set(self.test_ids), set(self.excluded_ids)
        both = train & test
        if both:
            raise ValueError(f"records in both train and test: {sorted(both)}")
        bad = excl & (train | test)
        if bad:
            raise ValueError(f"excluded records listed in a split: {sorted(bad)}")
        return self

    def side(self, record_id: str) -> Optional[str]:
        if record_id in self.excluded_ids:
            return "excluded"
        if record_id in self.train_ids:
            return "train"
        if record_id in self.test_ids:
            return "test"
        return None


def aami_split(record_ids: Iterable[str], spec: Optional[SplitSpec] = None) -> tuple[list[str], list[str]]:
    """Partition record ids into (train, test); excluded and unknown ids are dropped."""
    spec = (spec or SplitSpec()).validate()
    train, test = [], []
    for rid in record_ids:
        side = spec.side(rid)
        if side == "train":
            train.append(rid)
        elif side == "test":
            test.append(rid)
    return train, test


@dataclass
class RawSegment:
    record_id: str
    start_sample: int
    signal: np.ndarray
    r_peaks: np.ndarray


@dataclass
class Segment:
    record_id: str
    start_sample: int
    channels: np.ndarray  # (2, L); row 1 is the exact negation of row 0
    target: np.ndarray  # (L,) in [0, 1]
    r_peaks: np.ndarray  # local indices

    @property
    def length(self) -> int:
        return self.channels.shape[1]

    def inverted(self) -> "Segment":
        """The same segment for a polarity-inverted ECG (rows swapped)."""
        return Segment(self.record_id, self.start_sample, self.channels[::-1].copy(), self.target, self.r_peaks)


def segment_record(
    signal: np.ndarray,
    fs: float,
    annotations: Optional[AnnotationSet],
    record_id: str = "",
    window_s: float = 10.0,
    stride_s: Optional[float] = None,
) -> list[RawSegment]:
    """Cut consecutive windows (trailing partial window dropped)."""
    length = window_s * fs
    if abs(length - round(length)) > 1e-9:
        raise ValueError(f"window of {window_s} s is not an integral number of samples at {fs} Hz")
    length = int(round(length))
    stride = length if stride_s is None else int(round(stride_s * fs))
    if stride < 1:
        raise ValueError("stride must be at least one sample")
    x = np.asarray(signal, dtype=np.float64)
    peaks = annotations.samples if annotations is not None else np.zeros(0, dtype=np.int64)
    out = []
    for start in range(0, x.size - length + 1, stride):
        lo, hi = np.searchsorted(peaks, [start, start + length])
        out.append(RawSegment(record_id, start, x[start : start + length], peaks[lo:hi] - start))
    return out


def normalize(channel: np.ndarray) -> np.ndarray:
    x = np.asarray(channel, dtype=np.float64)
    sd = x.std()
    if sd < 1e-8:
        return np.zeros_like(x)
    return (x - x.mean()) / sd


def make_dual_channel(channel: np.ndarray) -> np.ndarray:
    x = np.asarray(channel, dtype=np.float64)
    return np.stack([x, -x])


def make_target(r_peaks: Sequence[int], length: int, config: Optional[LabelConfig] = None) -> np.ndarray:
    cfg = (config or LabelConfig()).validate()
    target = np.zeros(length)
    peaks = np.asarray(r_peaks, dtype=np.int64)
    if peaks.size and (peaks.min() < 0 or peaks.max() >= length):
        raise ValueError("r_peaks must lie in [0, length)")
    if cfg.mode == "binary":
        target[peaks] = 1.0
        return target
    sigma = cfg.sigma_samples
    reach = int(np.ceil(10 * sigma))
    for p in peaks:
        lo, hi = max(0, p - reach), min(length, p + reach + 1)
        i = np.arange(lo, hi)
        np.maximum(target[lo:hi], np.exp(-((i - p) ** 2) / (2.0 * sigma**2)), out=target[lo:hi])
    return target


def build_segment(raw: RawSegment, config: Optional[LabelConfig] = None) -> Segment:
    ch = normalize(raw.signal)
    return Segment(
        raw.record_id,
        raw.start_sample,
        make_dual_channel(ch),
        make_target(raw.r_peaks, ch.size, config),
        np.asarray(raw.r_peaks, dtype=np.int64),
    )


def prepare_record(
    record: EcgRecord,
    annotations: Optional[AnnotationSet],
    denoise_config: Optional[DenoiseConfig] = None,
    label_config: Optional[LabelConfig] = None,
    channel: int = 0,
    window_s: float = 10.0,
) -> list[Segment]:
    """Preprocess one channel of a record and return labeled segments."""
    clean = preprocess(record.channel_mv(channel), record.sampling_rate_hz, denoise_config)
    raws = segment_record(clean, record.sampling_rate_hz, annotations, record.record_id, window_s)
    return [build_segment(r, label_config) for r in raws]


# ----------------------------------------------------------------------------
# archive


@dataclass
class ArchiveManifest:
    fs: float
    window_s: float
    label: dict
    denoise: dict
    channel: int
    records: list[str] = field(default_factory=list)
    sides: dict = field(default_factory=dict)  # record_id -> "train" / "test" / "unassigned"
    version: int = ARCHIVE_VERSION
    count: int = 0
    segments: list[dict] = field(default_factory=list)  # {"record_id", "start_sample"}
    references: dict = field(default_factory=dict)  # record_id -> global R-peak indices covered

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def write_archive(out_dir: Path | str, segments: Sequence[Segment], manifest: ArchiveManifest) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    length = segments[0].length if segments else 0
    peaks = [s.r_peaks.astype(np.int64) for s in segments]
    offsets = np.concatenate([[0], np.cumsum([p.size for p in peaks])]).astype(np.int64)
    arrays = {
        "channels": np.stack([s.channels for s in segments]) if segments else np.zeros((0, 2, length)),
        "targets": np.stack([s.target for s in segments]) if segments else np.zeros((0, length)),
        "starts": np.array([s.start_sample for s in segments], dtype=np.int64),
        "peaks": np.concatenate(peaks) if peaks else np.zeros(0, dtype=np.int64),
        "peak_offsets": offsets,
    }
    manifest.count = len(segments)
    manifest.segments = [{"record_id": s.record_id, "start_sample": int(s.start_sample)} for s in segments]
    (out_dir / ARCHIVE_FILE).write_bytes(container.dumps(arrays))
    (out_dir / MANIFEST_FILE).write_text(manifest.to_json() + "\n")


def read_archive(path: Path | str) -> tuple[list[Segment], ArchiveManifest]:
    path = Path(path)
    manifest = ArchiveManifest(**json.loads((path / MANIFEST_FILE).read_text()))
    if manifest.version != ARCHIVE_VERSION:
        raise ValueError(f"unsupported archive version {manifest.version}")
    arrays = container.loads((path / ARCHIVE_FILE).read_bytes())
    offs = arrays["peak_offsets"]
    segments = [
        Segment(
            meta["record_id"],
            int(arrays["starts"][i]),
            arrays["channels"][i],
            arrays["targets"][i],
            arrays["peaks"][offs[i] : offs[i + 1]],
        )
        for i, meta in enumerate(manifest.segments)
    ]
    return segments, manifest
