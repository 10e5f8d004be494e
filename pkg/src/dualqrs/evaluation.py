"""Beat matching under a fixed tolerance window and Se / +P / accuracy reporting."""

from __future__ import annotations

import bisect
import csv
import io
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

REPORT_SCHEMA = "dualqrs-report/1"
COLUMNS = ("TP", "FP", "FN", "Se", "+P", "Accuracy")
AGGREGATE_ID = "Overall"


@dataclass(frozen=True)
class MatchCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "fn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class Metrics:
    se: Optional[float]
    ppv: Optional[float]
    accuracy: Optional[float]


def _check_sorted(x: np.ndarray, what: str) -> None:
    if x.size > 1 and np.any(np.diff(x) < 0):
        raise ValueError(f"{what} must be sorted in increasing order")


def match(
    detections: Sequence[int],
    references: Sequence[int],
    fs: float,
    window_ms: float = 75.0,
) -> MatchCounts:
    """Greedy one-to-one matching.

    References are visited in order; each takes the nearest still-unmatched
    detection no further than half the window away (earlier detection on a
    distance tie).
    """
    det = np.asarray(detections, dtype=np.int64).ravel()
    ref = np.asarray(references, dtype=np.int64).ravel()
    _check_sorted(det, "detections")
    _check_sorted(ref, "references")
    # |d| * 1000 / fs <= window / 2, kept in multiplication form
    limit = window_ms / 2.0 * fs
    used = np.zeros(det.size, dtype=bool)
    det_list = det.tolist()
    tp = 0
    for r in ref.tolist():
        pos = bisect.bisect_left(det_list, r)
        best, best_d = -1, None
        j = pos - 1
        while j >= 0 and (r - det_list[j]) * 1000.0 <= limit:
            if not used[j]:
                best, best_d = j, r - det_list[j]
                break
            j -= 1
        j = pos
        while j < len(det_list) and (det_list[j] - r) * 1000.0 <= limit:
            if not used[j]:
                if best_d is None or det_list[j] - r < best_d:
                    best = j
                break
            j += 1
        if best >= 0:
            used[best] = True
            tp += 1
    return MatchCounts(tp, det.size - tp, ref.size - tp)


def _pct(num: int, den: int) -> Optional[float]:
    return 100.0 * num / den if den > 0 else None


def metrics(counts: MatchCounts) -> Metrics:
    return Metrics(
        _pct(counts.tp, counts.tp + counts.fn),
        _pct(counts.tp, counts.tp + counts.fp),
        _pct(counts.tp, counts.tp + counts.fp + counts.fn),
    )


# ----------------------------------------------------------------------------
# reports


def natural_key(s: str):
    return [(0, int(t), "") if t.isdigit() else (1, 0, t) for t in re.findall(r"\d+|\D+", s)]


@dataclass
class ReportRow:
    record_id: str
    counts: MatchCounts
    metrics: Metrics

    def as_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "TP": self.counts.tp,
            "FP": self.counts.fp,
            "FN": self.counts.fn,
            "Se": self.metrics.se,
            "+P": self.metrics.ppv,
            "Accuracy": self.metrics.accuracy,
        }


@dataclass
class DetectionReport:
    rows: list[ReportRow]
    aggregate: ReportRow
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "metadata": self.metadata,
            "rows": [r.as_dict() for r in self.rows],
            "aggregate": self.aggregate.as_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DetectionReport":
        d = json.loads(text)
        if d.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"unknown report schema {d.get('schema')!r}")

        def row(r):
            c = MatchCounts(r["TP"], r["FP"], r["FN"])
            return ReportRow(r["record_id"], c, metrics(c))

        return cls([row(r) for r in d["rows"]], row(d["aggregate"]), d.get("metadata", {}))

    def to_csv(self, label: str = "record_id", include_aggregate: bool = True) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow((label,) + COLUMNS)
        for r in [*self.rows, self.aggregate] if include_aggregate else self.rows:
            d = r.as_dict()
            w.writerow([d["record_id"], d["TP"], d["FP"], d["FN"]] + [_fmt(d[k]) for k in COLUMNS[3:]])
        return out.getvalue()

    def render_table(self, title: str = "", label: str = "Record", include_aggregate: bool = True) -> str:
        head = [label, *COLUMNS]
        body = [[r.record_id, str(r.counts.tp), str(r.counts.fp), str(r.counts.fn),
                 _fmt(r.metrics.se), _fmt(r.metrics.ppv), _fmt(r.metrics.accuracy)]
                for r in [*self.rows, self.aggregate]]  # fmt: skip
        widths = [max(len(x[i]) for x in [head, *body]) for i in range(len(head))]
        line = lambda cells: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))
        rule = "-" * len(line(head))
        parts = [title] if title else []
        parts += [line(head), rule, *[line(b) for b in body[:-1]]]
        if include_aggregate:
            parts += [rule, line(body[-1])]
        return "\n".join(parts) + "\n"


def _fmt(v: Optional[float]) -> str:
    return "undefined" if v is None else f"{v:.2f}"


def report(
    per_record: Mapping[str, MatchCounts] | Iterable[tuple[str, MatchCounts]],
    split: str = "",
    metadata: Optional[dict] = None,
    sort_rows: bool = True,
) -> DetectionReport:
    items = list(per_record.items()) if isinstance(per_record, Mapping) else list(per_record)
    if not items:
        raise ValueError("report needs at least one record")
    seen: set[str] = set()
    for rid, _ in items:
        if rid in seen:
            raise ValueError(f"duplicate record id {rid!r}")
        seen.add(rid)
    if sort_rows:
        items.sort(key=lambda kv: natural_key(kv[0]))
    rows = [ReportRow(rid, c, metrics(c)) for rid, c in items]
    total = MatchCounts()
    for _, c in items:
        total = total + c
    meta = {"split": split, **(metadata or {})}
    return DetectionReport(rows, ReportRow(AGGREGATE_ID, total, metrics(total)), meta)
