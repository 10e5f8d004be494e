"""Record ingestion: WFDB (format 212 + MIT annotations), CSV fallback, synthetic ECG."""

from __future__ import annotations

from pathlib import Path
from typing import Iterator, Optional

from .csvio import parse_csv_record, read_csv_record, write_csv_record
from .records import (
    ANNOTATION_SYMBOLS,
    BEAT_CODES,
    AnnotationSet,
    ChannelInfo,
    EcgRecord,
    OtherAnnotation,
)
from .synth import SynthConfig, synthesize_components, synthesize_ecg
from .wfdb import (
    HeaderInfo,
    UnsupportedFormatError,
    WfdbParseError,
    encode_annotations,
    encode_format212,
    parse_annotations,
    parse_format212,
    parse_wfdb_header,
    read_record,
)

__all__ = [
    "ANNOTATION_SYMBOLS",
    "BEAT_CODES",
    "AnnotationSet",
    "ChannelInfo",
    "EcgRecord",
    "HeaderInfo",
    "OtherAnnotation",
    "SynthConfig",
    "UnsupportedFormatError",
    "WfdbParseError",
    "discover_records",
    "encode_annotations",
    "encode_format212",
    "load_record",
    "parse_annotations",
    "parse_csv_record",
    "parse_format212",
    "parse_wfdb_header",
    "read_csv_record",
    "read_record",
    "synthesize_components",
    "synthesize_ecg",
    "write_csv_record",
]


def discover_records(data_dir: Path | str) -> list[Path]:
    """WFDB header paths, or CSV files when the directory holds no headers."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory {data_dir} does not exist")
    headers = sorted(data_dir.glob("*.hea"))
    return headers if headers else sorted(data_dir.glob("*.csv"))


def load_record(path: Path | str, csv_fs: float = 360.0) -> tuple[EcgRecord, Optional[AnnotationSet]]:
    path = Path(path)
    if path.suffix == ".csv":
        return read_csv_record(path, fs=csv_fs)
    return read_record(path)
