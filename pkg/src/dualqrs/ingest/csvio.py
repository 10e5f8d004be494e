"""CSV fallback records: ``sample_index, value_mv[, annotation_flag]`` per line."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Optional

import numpy as np

from .records import AnnotationSet, ChannelInfo, EcgRecord

NORMAL_BEAT = 1


def read_csv_record(
    path: Path | str, fs: float = 360.0, record_id: Optional[str] = None
) -> tuple[EcgRecord, Optional[AnnotationSet]]:
    path = Path(path)
    return parse_csv_record(path.read_text(), fs=fs, record_id=record_id or path.stem)


def parse_csv_record(
    text: str, fs: float = 360.0, record_id: str = "csv"
) -> tuple[EcgRecord, Optional[AnnotationSet]]:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].lstrip().startswith("#")]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]  # header line
    if not rows:
        raise ValueError(f"{record_id}: CSV record has no samples")
    width = len(rows[0])
    if width not in (2, 3):
        raise ValueError(f"{record_id}: expected 2 or 3 columns, got {width}")
    try:
        idx = np.array([int(float(r[0])) for r in rows])
        values = np.array([float(r[1]) for r in rows])
        flags = np.array([int(float(r[2])) for r in rows]) if width == 3 else None
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{record_id}: malformed CSV row ({exc})") from None
    if not np.array_equal(idx, np.arange(len(idx)) + idx[0]):
        raise ValueError(f"{record_id}: sample_index column must be consecutive")
    record = EcgRecord(record_id, fs, (ChannelInfo("csv", gain=1.0),), values[None, :])
    annotations = None
    if flags is not None:
        peaks = np.flatnonzero(flags)
        annotations = AnnotationSet(record_id, peaks, np.full(peaks.size, NORMAL_BEAT))
    return record, annotations


def write_csv_record(record: EcgRecord, annotations: Optional[AnnotationSet] = None, channel: int = 0) -> str:
    values = record.channel_mv(channel)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    if annotations is None:
        w.writerow(["sample_index", "value_mv"])
        for i, v in enumerate(values):
            w.writerow([i, repr(float(v))])
    else:
        flags = np.zeros(values.size, dtype=int)
        flags[annotations.samples] = 1
        w.writerow(["sample_index", "value_mv", "annotation_flag"])
        for i, (v, f) in enumerate(zip(values, flags)):
            w.writerow([i, repr(float(v)), int(f)])
    return out.getvalue()


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True
