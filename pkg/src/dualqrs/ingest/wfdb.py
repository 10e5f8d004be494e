"""WFDB readers: ``.hea`` header text, format-212 ``.dat`` signals, MIT ``.atr`` annotations."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .records import BEAT_CODES, AnnotationSet, ChannelInfo, EcgRecord, OtherAnnotation

DEFAULT_GAIN = 200.0
DEFAULT_FS = 250.0
SUPPORTED_FORMATS = (212,)

# MIT annotation pseudo-codes
SKIP, NUM, SUB, CHN, AUX = 59, 60, 61, 62, 63
ACMAX = 49


class WfdbParseError(ValueError):
    pass


class UnsupportedFormatError(WfdbParseError):
    pass


@dataclass
class SignalSpec:
    file_name: str
    fmt: int
    gain: float
    baseline: int
    units: str
    adc_resolution: int
    adc_zero: int
    init_value: int
    checksum: int
    block_size: int
    description: str
    byte_offset: int = 0


@dataclass
class HeaderInfo:
    record_id: str
    n_channels: int
    sampling_rate_hz: float
    n_samples: int
    signals: list[SignalSpec] = field(default_factory=list)
    comments: list[str] = field(default_factory=list)

    @property
    def format_tag(self) -> int:
        return self.signals[0].fmt if self.signals else 0

    @property
    def gains(self) -> list[float]:
        return [s.gain for s in self.signals]


_RECORD_LINE = re.compile(
    r"^(?P<name>[^\s/]+)(?:/(?P<nseg>\d+))?\s+(?P<nsig>\d+)"
    r"(?:\s+(?P<fs>[0-9.eE+-]+)(?:/[0-9.eE+-]+(?:\([^)]*\))?)?"
    r"(?:\s+(?P<nsamp>\d+))?)?"
)
_FORMAT = re.compile(r"^(?P<fmt>\d+)(?:x\d+)?(?::\d+)?(?:\+(?P<offset>\d+))?$")
_GAIN = re.compile(r"^(?P<gain>[0-9.eE+-]+)(?:\((?P<baseline>-?\d+)\))?(?:/(?P<units>\S+))?$")


def _int_field(tokens: Sequence[str], i: int, default: int, lineno: int, what: str) -> int:
    if len(tokens) <= i:
        return default
    try:
        return int(tokens[i])
    except ValueError:
        raise WfdbParseError(f"line {lineno}: bad {what} {tokens[i]!r}") from None


def parse_wfdb_header(data: bytes | str) -> HeaderInfo:
    text = data.decode("latin-1") if isinstance(data, (bytes, bytearray)) else data
    header: Optional[HeaderInfo] = None
    comments: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            comments.append(line[1:].strip())
            continue
        if header is None:
            m = _RECORD_LINE.match(line)
            if not m:
                raise WfdbParseError(f"line {lineno}: malformed record line {line!r}")
            if m.group("nseg"):
                raise UnsupportedFormatError(f"line {lineno}: multi-segment records are unsupported")
            nsig = int(m.group("nsig"))
            if nsig < 1:
                raise WfdbParseError(f"line {lineno}: record declares {nsig} signals")
            try:
                fs = float(m.group("fs")) if m.group("fs") else DEFAULT_FS
            except ValueError:
                raise WfdbParseError(f"line {lineno}: bad sampling frequency") from None
            if fs <= 0:
                raise WfdbParseError(f"line {lineno}: sampling frequency must be positive")
            nsamp = int(m.group("nsamp")) if m.group("nsamp") else 0
            header = HeaderInfo(m.group("name"), nsig, fs, nsamp)
            continue
        if len(header.signals) == header.n_channels:
            raise WfdbParseError(f"line {lineno}: more signal lines than the {header.n_channels} declared")
        tokens = line.split()
        if len(tokens) < 2:
            raise WfdbParseError(f"line {lineno}: signal line needs file name and format")
        fm = _FORMAT.match(tokens[1])
        if not fm:
            raise WfdbParseError(f"line {lineno}: bad format field {tokens[1]!r}")
        fmt = int(fm.group("fmt"))
        if fmt not in SUPPORTED_FORMATS:
            raise UnsupportedFormatError(f"line {lineno}: unsupported format {fmt}")
        adc_zero = _int_field(tokens, 4, 0, lineno, "ADC zero")
        gain, baseline, units = DEFAULT_GAIN, adc_zero, "mV"
        if len(tokens) > 2:
            gm = _GAIN.match(tokens[2])
            if not gm:
                raise WfdbParseError(f"line {lineno}: bad gain field {tokens[2]!r}")
            gain = float(gm.group("gain")) or DEFAULT_GAIN
            if gm.group("baseline") is not None:
                baseline = int(gm.group("baseline"))
            units = gm.group("units") or "mV"
        header.signals.append(
            SignalSpec(
                file_name=tokens[0],
                fmt=fmt,
                gain=gain,
                baseline=baseline,
                units=units,
                adc_resolution=_int_field(tokens, 3, 12, lineno, "ADC resolution"),
                adc_zero=adc_zero,
                init_value=_int_field(tokens, 5, 0, lineno, "initial value"),
                checksum=_int_field(tokens, 6, 0, lineno, "checksum"),
                block_size=_int_field(tokens, 7, 0, lineno, "block size"),
                description=" ".join(tokens[8:]),
                byte_offset=int(fm.group("offset") or 0),
            )
        )
    if header is None:
        raise WfdbParseError("line 1: header has no record line")
    if len(header.signals) != header.n_channels:
        raise WfdbParseError(
            f"line {lineno}: {header.n_channels} signals declared, {len(header.signals)} described"
        )
    header.comments = comments
    return header


# ----------------------------------------------------------------------------
# format 212


def parse_format212(data: bytes, n_channels: int = 2) -> np.ndarray:
    """Decode packed 12-bit pairs; returns ``(n_frames, n_channels)`` int64."""
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    if buf.size % 3:
        raise WfdbParseError(f"format 212: trailing partial triple at byte offset {buf.size - buf.size % 3}")
    trip = buf.reshape(-1, 3).astype(np.int64)
    s1 = trip[:, 0] | ((trip[:, 1] & 0x0F) << 8)
    s2 = trip[:, 2] | ((trip[:, 1] & 0xF0) << 4)
    flat = np.empty(2 * len(trip), dtype=np.int64)
    flat[0::2] = s1
    flat[1::2] = s2
    flat[flat > 2047] -= 4096
    if flat.size % n_channels:
        raise WfdbParseError(f"format 212: {flat.size} samples do not fill {n_channels}-channel frames")
    return flat.reshape(-1, n_channels)


def encode_format212(samples: np.ndarray) -> bytes:
    """Inverse of :func:`parse_format212` for frame-major samples in [-2048, 2047]."""
    flat = np.asarray(samples, dtype=np.int64).reshape(-1)
    if flat.size % 2:
        raise ValueError("format 212 encoder needs an even number of samples")
    if flat.size and (flat.min() < -2048 or flat.max() > 2047):
        raise ValueError("format 212 samples must fit in 12 bits")
    u = flat & 0xFFF
    s1, s2 = u[0::2], u[1::2]
    out = np.empty((s1.size, 3), dtype=np.uint8)
    out[:, 0] = s1 & 0xFF
    out[:, 1] = ((s1 >> 8) & 0x0F) | ((s2 >> 4) & 0xF0)
    out[:, 2] = s2 & 0xFF
    return out.tobytes()


# ----------------------------------------------------------------------------
# MIT annotations


def parse_annotations(data: bytes, record_id: str = "") -> AnnotationSet:
    """Decode an MIT-format annotation stream.

    Beat codes (see :data:`BEAT_CODES`) form the R-peak set; every other
    annotation is preserved in ``AnnotationSet.other``.
    """
    raw = bytes(data)
    if len(raw) % 2:
        raw = raw[:-1]
    words = np.frombuffer(raw, dtype="<u2")
    beats: list[tuple[int, int]] = []
    other: list[dict] = []
    time = 0
    i = 0
    current: Optional[dict] = None
    n = len(words)
    while i < n:
        w = int(words[i])
        code, value = w >> 10, w & 0x3FF
        if code == 0 and value == 0:
            break
        if code == SKIP:
            if i + 2 >= n:
                raise WfdbParseError(f"annotation SKIP truncated at byte {2 * i}")
            hi, lo = int(words[i + 1]), int(words[i + 2])
            interval = (hi << 16) | lo
            if interval >= 1 << 31:
                interval -= 1 << 32
            time += interval
            i += 3
            continue
        if code == NUM or code == SUB or code == CHN:
            if current is not None:
                current[{NUM: "num", SUB: "subtype", CHN: "chan"}[code]] = value
            i += 1
            continue
        if code == AUX:
            nwords = (value + 1) // 2
            text = raw[2 * (i + 1) : 2 * (i + 1) + value].decode("latin-1").rstrip("\x00")
            if current is not None:
                current["aux"] = text
            i += 1 + nwords
            continue
        if code > ACMAX:
            raise WfdbParseError(f"unknown annotation code {code} at byte {2 * i}")
        time += value
        i += 1
        if code == 0:
            # NOTQRS placeholder: time advance only
            current = None
            continue
        current = {"sample": time, "code": code}
        if code in BEAT_CODES:
            beats.append(current)
        else:
            other.append(current)
    samples = [b["sample"] for b in beats]
    codes = [b["code"] for b in beats]
    rest = tuple(
        OtherAnnotation(
            sample=o["sample"],
            code=o["code"],
            aux=o.get("aux", ""),
            subtype=o.get("subtype", 0),
            chan=o.get("chan", 0),
            num=o.get("num", 0),
        )
        for o in other
    )
    # beat-level side fields are only kept for non-beats; beats carry code only
    return AnnotationSet(record_id=record_id, samples=samples, codes=codes, other=rest)


def encode_annotations(entries: Iterable[tuple[int, int] | tuple[int, int, str]]) -> bytes:
    """Encode ``(sample, code[, aux])`` entries (sorted by sample) as an MIT stream."""
    words: list[int] = []
    time = 0
    for entry in entries:
        sample, code = int(entry[0]), int(entry[1])
        aux = entry[2] if len(entry) > 2 else ""
        if not 1 <= code <= ACMAX:
            raise ValueError(f"annotation code {code} out of range")
        delta = sample - time
        if delta < 0:
            raise ValueError("annotations must be sorted by sample")
        if delta > 0x3FF:
            words += [SKIP << 10, (delta >> 16) & 0xFFFF, delta & 0xFFFF]
            delta = 0
        words.append((code << 10) | delta)
        time = sample
        if aux:
            b = aux.encode("latin-1")
            words.append((AUX << 10) | len(b))
            padded = b + b"\x00" * (len(b) % 2)
            words += list(np.frombuffer(padded, dtype="<u2"))
    words.append(0)
    return np.asarray(words, dtype="<u2").tobytes()


# ----------------------------------------------------------------------------
# record-level reader


def read_header(path: Path | str) -> HeaderInfo:
    return parse_wfdb_header(Path(path).read_bytes())


def read_record(stem: Path | str, annotator: str = "atr") -> tuple[EcgRecord, Optional[AnnotationSet]]:
    """Read ``<stem>.hea`` plus its signal file(s) and, if present, ``<stem>.<annotator>``."""
    stem = Path(stem)
    hea = stem.with_suffix(".hea") if stem.suffix != ".hea" else stem
    stem = hea.with_suffix("")
    header = read_header(hea)
    groups: dict[str, list[int]] = {}
    for idx, sig in enumerate(header.signals):
        groups.setdefault(sig.file_name, []).append(idx)
    columns: dict[int, np.ndarray] = {}
    for file_name, idxs in groups.items():
        blob = (hea.parent / file_name).read_bytes()
        offset = header.signals[idxs[0]].byte_offset
        blob = blob[offset:]
        frames_needed = header.n_samples
        if frames_needed:
            blob = blob[: -(-frames_needed * len(idxs) * 3 // 2)]
        if len(blob) % 3:
            # odd sample total: the last pair is stored as two bytes
            blob = blob + b"\x00" * (3 - len(blob) % 3)
        frames = parse_format212(blob, n_channels=len(idxs))
        if frames_needed:
            if len(frames) < frames_needed:
                raise WfdbParseError(
                    f"{file_name}: {len(frames)} frames on disk, header declares {frames_needed}"
                )
            frames = frames[:frames_needed]
        for j, idx in enumerate(idxs):
            columns[idx] = frames[:, j]
    samples = np.stack([columns[i] for i in range(header.n_channels)])
    channels = tuple(
        ChannelInfo(
            name=s.description or f"ch{i}",
            gain=s.gain,
            adc_zero=s.adc_zero,
            baseline=s.baseline,
            units=s.units,
        )
        for i, s in enumerate(header.signals)
    )
    record = EcgRecord(header.record_id, header.sampling_rate_hz, channels, samples)
    ann_path = stem.with_suffix(f".{annotator}")
    annotations = None
    if ann_path.exists():
        annotations = parse_annotations(ann_path.read_bytes(), header.record_id)
        annotations.check_within(record.n_samples)
    return record, annotations
