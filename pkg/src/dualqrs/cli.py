"""Command-line entry point: prepare, train, detect, evaluate and the check utilities.

Every command writes ``effective_config.json`` (the merged configuration) and
``run.log`` (the only file carrying timestamps) into its output directory.
Exit status is 0 iff no errors occurred; ``--json-errors`` puts a machine
readable error list on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import labeling, model, pan_tompkins, picker
from .evaluation import DetectionReport, MatchCounts, match, report
from .ingest import AnnotationSet, SynthConfig, discover_records, load_record, synthesize_ecg
from .labeling import ArchiveManifest, LabelConfig, Segment, SplitSpec
from .model import ModelConfig
from .nn.params import layer_rng
from .pan_tompkins import PtConfig, PtRecord
from .picker import PickerConfig
from .preprocess import DenoiseConfig, preprocess, remove_baseline

log = logging.getLogger("dualqrs")
log.addHandler(logging.NullHandler())  # errors reach stderr through the Outcome list only

CONFIG_FILE = "effective_config.json"
LOG_FILE = "run.log"
CHECKPOINT_FILE = "checkpoint.bin"
PEAKS_FILE = "peaks.csv"
DETECTED_FILE = "detected_records.json"


class CliError(Exception):
    """Fatal command error; the message goes to the error list."""


# ----------------------------------------------------------------------------
# configuration


@dataclass
class RunSettings:
    seed: int = 0
    window_s: float = 10.0
    channel: int = 0
    val_fraction: float = 0.1
    max_steps: Optional[int] = None
    match_window_ms: float = 75.0
    synthetic_records: int = 10
    synthetic_duration_s: float = 300.0


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    picker: PickerConfig = field(default_factory=PickerConfig)
    pt: PtConfig = field(default_factory=PtConfig)
    denoise: DenoiseConfig = field(default_factory=DenoiseConfig)
    label: LabelConfig = field(default_factory=LabelConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    synth: SynthConfig = field(default_factory=SynthConfig)
    run: RunSettings = field(default_factory=RunSettings)

    SECTIONS = ("model", "picker", "pt", "denoise", "label", "split", "synth", "run")

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.picker.validate()
        self.pt.validate()
        self.denoise.validate()
        self.label.validate()
        self.split.validate()
        self.synth.validate()
        if self.label.mode != self.model.label_mode:
            raise CliError(f"label mode {self.label.mode!r} disagrees with model label_mode {self.model.label_mode!r}")
        return self

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in self.SECTIONS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_SECTION_TYPES = {
    "model": ModelConfig,
    "picker": PickerConfig,
    "pt": PtConfig,
    "denoise": DenoiseConfig,
    "label": LabelConfig,
    "split": SplitSpec,
    "synth": SynthConfig,
    "run": RunSettings,
}
_TUPLE_KEYS = {"baseline_windows_ms", "p_t_amplitudes_mv", "baseline_wander", "powerline",
               "train_ids", "test_ids", "excluded_ids"}  # fmt: skip


def _build_section(name: str, values: dict):
    cls = _SECTION_TYPES[name]
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise CliError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
    values = {k: tuple(v) if k in _TUPLE_KEYS and isinstance(v, list) else v for k, v in values.items()}
    return cls(**values)


def load_config(path: Optional[Path], overrides: Sequence[str] = ()) -> RunConfig:
    raw: dict[str, dict] = {name: {} for name in RunConfig.SECTIONS}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {path}: {exc}") from None
        for key, val in doc.items():
            if key not in raw:
                raise CliError(f"unknown config section {key!r}")
            raw[key].update(val)
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in raw:
            raise CliError(f"override must look like section.key=value, got {item!r}")
        try:
            raw[section][name] = json.loads(value)
        except json.JSONDecodeError:
            raw[section][name] = value
    try:
        return RunConfig(**{name: _build_section(name, vals) for name, vals in raw.items()})
    except TypeError as exc:
        raise CliError(str(exc)) from None


# ----------------------------------------------------------------------------
# helpers


class Outcome:
    """Per-command error collector."""

    def __init__(self):
        self.errors: list[dict] = []

    def error(self, message: str, record: Optional[str] = None) -> None:
        entry = {"message": message}
        if record is not None:
            entry["record"] = record
        self.errors.append(entry)
        log.error("%s%s", f"{record}: " if record else "", message)


def _setup_output(out: Path, cfg: RunConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_FILE).write_text(cfg.to_json())
    handler = logging.FileHandler(out / LOG_FILE, mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    logging.getLogger().addHandler(handler)
    logging.getLogger().setLevel(logging.INFO)


def _parallel_map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))  # map keeps input order


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def synthetic_corpus(cfg: RunConfig, n_records: int, duration_s: float) -> list[tuple[SynthConfig, str]]:
    """Seeded record configs; every fourth record is polarity inverted. Returns (config, side)."""
    rng = layer_rng(cfg.run.seed, "synthetic-corpus")
    base = asdict(cfg.synth)
    n_train = math.ceil(n_records / 2)
    out = []
    for i in range(n_records):
        d = {
            **base,
            "duration_s": duration_s,
            "heart_rate_bpm": float(rng.uniform(50, 110)),
            "rr_jitter_fraction": 0.05,
            "white_noise_std": float(rng.uniform(0.0, 0.05)),
            "baseline_wander": (float(rng.uniform(0.0, 0.3)), float(rng.uniform(0.15, 0.4))),
            "powerline": (float(rng.uniform(0.0, 0.05)), 60.0),
            "invert_polarity": i % 4 == 3,
            "rng_seed": int(cfg.run.seed) * 100003 + i,
            "record_id": f"syn{i:03d}",
        }
        out.append((SynthConfig.from_dict(d), "train" if i < n_train else "test"))
    return out


# ----------------------------------------------------------------------------
# prepare


@dataclass
class _PrepareJob:
    source: Any  # Path to a record or a SynthConfig
    side: Optional[str]
    denoise: DenoiseConfig
    label: LabelConfig
    channel: int
    window_s: float
    emit_signals: bool


@dataclass
class _PrepareResult:
    record_id: str
    side: Optional[str]
    fs: float = 0.0
    segments: list = field(default_factory=list)
    references: list = field(default_factory=list)
    signals: Optional[np.ndarray] = None
    error: Optional[str] = None


def _prepare_one(job: _PrepareJob) -> _PrepareResult:
    rid = job.source.record_id if isinstance(job.source, SynthConfig) else Path(job.source).stem
    try:
        if isinstance(job.source, SynthConfig):
            record, ann = synthesize_ecg(job.source)
        else:
            record, ann = load_record(job.source)
        if ann is None:
            raise ValueError("no beat annotations found")
        ann.check_within(record.n_samples)
        if not 0 <= job.channel < record.n_channels:
            raise ValueError(f"channel {job.channel} not present ({record.n_channels} channels)")
        fs = record.sampling_rate_hz
        raw_mv = record.channel_mv(job.channel)
        clean = preprocess(raw_mv, fs, job.denoise)
        raws = labeling.segment_record(clean, fs, ann, rid, job.window_s)
        segs = [labeling.build_segment(r, job.label) for r in raws]
        covered = len(raws) * int(round(job.window_s * fs))
        refs = ann.window(0, covered).tolist()
        signals = None
        if job.emit_signals:
            signals = np.stack([raw_mv, remove_baseline(raw_mv, fs, job.denoise.baseline_windows_ms), clean])
        return _PrepareResult(rid, job.side, fs, segs, refs, signals)
    except (OSError, ValueError) as exc:
        return _PrepareResult(rid, job.side, error=f"{type(exc).__name__}: {exc}")


def cmd_prepare(args, cfg: RunConfig, outcome: Outcome) -> None:
    out = Path(args.output)
    jobs_src: list[tuple[Any, Optional[str]]] = []
    if args.synthetic:
        n = args.n_records if args.n_records is not None else cfg.run.synthetic_records
        dur = args.duration_s if args.duration_s is not None else cfg.run.synthetic_duration_s
        jobs_src = list(synthetic_corpus(cfg, n, dur))
    else:
        if args.data_dir is None:
            raise CliError("prepare needs a data directory or --synthetic")
        try:
            paths = discover_records(args.data_dir)
        except FileNotFoundError as exc:
            raise CliError(str(exc)) from None
        if not paths:
            raise CliError(f"no .hea or .csv records found in {args.data_dir}")
        for p in paths:
            side = cfg.split.side(p.stem)
            if side == "excluded":
                log.info("skipping excluded record %s", p.stem)
                continue
            jobs_src.append((p, side or "unassigned"))
        if args.n_records is not None:
            jobs_src = jobs_src[: args.n_records]
        if not jobs_src:
            raise CliError("every discovered record is excluded by the split")
    jobs = [
        _PrepareJob(src, side, cfg.denoise, cfg.label, cfg.run.channel, cfg.run.window_s, args.emit_signals)
        for src, side in jobs_src
    ]
    results = _parallel_map(_prepare_one, jobs, args.jobs)
    failed = [r for r in results if r.error]
    for r in failed:
        outcome.error(r.error, r.record_id)
    if failed and args.strict:
        raise CliError(f"{len(failed)} record(s) failed and --strict forbids partial output")
    good = [r for r in results if not r.error]
    if not good:
        raise CliError("no record could be prepared")
    fs_values = {r.fs for r in good}
    if len(fs_values) > 1:
        raise CliError(f"records have mixed sampling rates {sorted(fs_values)}")
    segments = [s for r in good for s in r.segments]
    manifest = ArchiveManifest(
        fs=good[0].fs,
        window_s=cfg.run.window_s,
        label=asdict(cfg.label),
        denoise=asdict(cfg.denoise),
        channel=cfg.run.channel,
        records=[r.record_id for r in good],
        sides={r.record_id: r.side for r in good},
        references={r.record_id: r.references for r in good},
    )
    labeling.write_archive(out, segments, manifest)
    (out / "annotations.json").write_text(json.dumps(manifest.references, sort_keys=True) + "\n")
    if args.emit_signals:
        sig_dir = out / "signals"
        sig_dir.mkdir(exist_ok=True)
        for r in good:
            rows = ((i, repr(a), repr(b), repr(c)) for i, (a, b, c) in enumerate(r.signals.T))
            _write_csv(sig_dir / f"{r.record_id}.csv", ("sample", "raw_mv", "baseline_removed_mv", "denoised_mv"), rows)
    summary = {"segments": len(segments), "records": len(good), "failed": [r.record_id for r in failed]}
    (out / "prepare_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("prepared %d segments from %d records", len(segments), len(good))
    print(json.dumps(summary, sort_keys=True))


# ----------------------------------------------------------------------------
# train


def _select(segments: list[Segment], manifest: ArchiveManifest, side: str) -> list[Segment]:
    if side == "all":
        return list(segments)
    chosen = [s for s in segments if manifest.sides.get(s.record_id) == side]
    if not chosen and not any(v in ("train", "test") for v in manifest.sides.values()):
        return list(segments)  # corpus without a split: use everything
    return chosen


def _relabel(segments: list[Segment], label: LabelConfig) -> list[Segment]:
    return [
        Segment(s.record_id, s.start_sample, s.channels, labeling.make_target(s.r_peaks, s.length, label), s.r_peaks)
        for s in segments
    ]


def holdout_split(segments: list[Segment], fraction: float, seed: int) -> tuple[list[Segment], list[Segment]]:
    n_val = int(round(fraction * len(segments)))
    if n_val == 0 or n_val >= len(segments):
        return list(segments), []
    order = layer_rng(seed, "validation").permutation(len(segments))
    val_idx = set(order[:n_val].tolist())
    train = [s for i, s in enumerate(segments) if i not in val_idx]
    val = [s for i, s in enumerate(segments) if i in val_idx]
    return train, val


def _read_archive(path) -> tuple[list[Segment], ArchiveManifest]:
    try:
        return labeling.read_archive(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError(f"cannot read archive {path}: {exc}") from None


def cmd_train(args, cfg: RunConfig, outcome: Outcome) -> None:
    out = Path(args.output)
    segments, manifest = _read_archive(args.archive)
    train_segs = _select(segments, manifest, "train")
    if not train_segs:
        raise CliError("archive holds no training segments")
    train_segs = _relabel(train_segs, cfg.label)
    fit, val = holdout_split(train_segs, cfg.run.val_fraction, cfg.model.seed)
    net = model.build(cfg.model)
    log.info("training %d segments (%d validation), arch %s", len(fit), len(val), cfg.model.architecture_hash())
    result = model.train(net, fit, val, cfg.model, max_steps=cfg.run.max_steps)
    (out / CHECKPOINT_FILE).write_bytes(result.best_checkpoint)
    (out / "history.csv").write_text(result.history_csv())
    summary = {
        "arch_hash": cfg.model.architecture_hash(),
        "best_epoch": result.best_epoch,
        "steps": result.steps,
        "train_segments": len(fit),
        "val_segments": len(val),
        "ablation": args.ablation,
    }
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))


# ----------------------------------------------------------------------------
# detect


@dataclass
class _DetectedPeaks:
    rows: list = field(default_factory=list)  # (record_id, segment_id, local, global, probability)
    prob_rows: list = field(default_factory=list)
    records: list = field(default_factory=list)


def _is_archive(path: Path) -> bool:
    return path.is_dir() and (path / labeling.MANIFEST_FILE).exists()


def _load_network(args, cfg: RunConfig, explicit_model: bool) -> model.UNetBiLSTM:
    if not args.checkpoint:
        raise CliError("--checkpoint is required for the network detector")
    try:
        net = model.UNetBiLSTM.from_checkpoint(Path(args.checkpoint).read_bytes())
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot load checkpoint {args.checkpoint}: {exc}") from None
    if explicit_model and net.config.architecture_hash() != cfg.model.architecture_hash():
        raise CliError(
            f"config hash mismatch: checkpoint {net.config.architecture_hash()} vs config "
            f"{cfg.model.architecture_hash()}"
        )
    return net


def _detect_segments_net(net, segments: list[Segment], fs: float, cfg: RunConfig, emit: bool, det: _DetectedPeaks):
    if not segments:
        return
    x = np.stack([s.channels[: net.config.input_channels] for s in segments])
    probs = net.forward(x, batch_size=cfg.model.batch_size).probabilities
    for k, (seg, p) in enumerate(zip(segments, probs)):
        peaks = picker.pick(p, fs, cfg.picker)
        for i, pr in zip(peaks.indices, peaks.probabilities):
            det.rows.append((seg.record_id, k, int(i), int(seg.start_sample + i), repr(float(pr))))
        if emit:
            for i in range(seg.length):
                det.prob_rows.append((seg.record_id, k, i, seg.start_sample + i, repr(float(seg.channels[0, i])),
                                      repr(float(p[i])), repr(float(seg.target[i]))))  # fmt: skip


def _detect_segments_pt(segments: list[Segment], fs: float, cfg: RunConfig, det: _DetectedPeaks):
    pt_cfg = PtConfig(**{**cfg.pt.to_dict(), "fs": fs})
    for k, seg in enumerate(segments):
        peaks = pan_tompkins.pt_detect(seg.channels[0], fs, pt_cfg).peaks
        for i in peaks.indices:
            det.rows.append((seg.record_id, k, int(i), int(seg.start_sample + i), "1.0"))


def cmd_detect(args, cfg: RunConfig, outcome: Outcome) -> None:
    out = Path(args.output)
    src = Path(args.input)
    det = _DetectedPeaks()
    explicit_model = any(o.startswith("model.") for o in args.overrides) or (
        args.config is not None and "model" in json.loads(Path(args.config).read_text())
    )
    if _is_archive(src):
        segments, manifest = _read_archive(src)
        chosen = _select(segments, manifest, args.split)
        by_record: dict[str, list[Segment]] = {}
        for s in chosen:
            by_record.setdefault(s.record_id, []).append(s)
        fs = manifest.fs
        net = _load_network(args, cfg, explicit_model) if args.detector == "net" else None
        for rid, segs in by_record.items():
            if net is not None:
                _detect_segments_net(net, segs, fs, cfg, args.emit_probabilities, det)
            else:
                _detect_segments_pt(segs, fs, cfg, det)
            det.records.append(rid)
    else:
        paths = [src] if src.is_file() else discover_records(src)
        if not paths:
            raise CliError(f"no records found at {src}")
        net = _load_network(args, cfg, explicit_model) if args.detector == "net" else None
        for p in paths:
            try:
                record, _ = load_record(p)
                fs = record.sampling_rate_hz
                sig = record.channel_mv(cfg.run.channel)
                if net is None:
                    pt_cfg = PtConfig(**{**cfg.pt.to_dict(), "fs": fs})
                    for i in pan_tompkins.pt_detect(sig, fs, pt_cfg).peaks.indices:
                        det.rows.append((record.record_id, "", int(i), int(i), "1.0"))
                else:
                    clean = preprocess(sig, fs, cfg.denoise)
                    raws = labeling.segment_record(clean, fs, None, record.record_id, cfg.run.window_s)
                    segs = [labeling.build_segment(r, cfg.label) for r in raws]
                    _detect_segments_net(net, segs, fs, cfg, args.emit_probabilities, det)
                det.records.append(record.record_id)
            except (OSError, ValueError) as exc:
                outcome.error(f"{type(exc).__name__}: {exc}", p.stem)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / PEAKS_FILE, ("record_id", "segment_id", "local_index", "global_index", "probability"), det.rows)
    (out / DETECTED_FILE).write_text(json.dumps(det.records) + "\n")
    if args.emit_probabilities and det.prob_rows:
        _write_csv(out / "probabilities.csv",
                   ("record_id", "segment_id", "local_index", "global_index", "signal", "probability", "target"),
                   det.prob_rows)  # fmt: skip
    summary = {"detector": args.detector, "records": len(det.records), "peaks": len(det.rows)}
    print(json.dumps(summary, sort_keys=True))


# ----------------------------------------------------------------------------
# evaluate / pt-lengths


def read_peaks_csv(path: Path) -> dict[str, np.ndarray]:
    peaks: dict[str, list[int]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"record_id", "global_index"} <= set(reader.fieldnames):
            raise CliError(f"{path}: expected columns record_id and global_index")
        for row in reader:
            peaks.setdefault(row["record_id"], []).append(int(row["global_index"]))
    return {k: np.unique(np.asarray(v, dtype=np.int64)) for k, v in peaks.items()}


def _load_references(src: Path, outcome: Outcome) -> tuple[dict[str, np.ndarray], dict[str, float]]:
    if _is_archive(src):
        manifest = ArchiveManifest(**json.loads((src / labeling.MANIFEST_FILE).read_text()))
        refs = {k: np.asarray(v, dtype=np.int64) for k, v in manifest.references.items()}
        return refs, {k: manifest.fs for k in refs}
    refs, rates = {}, {}
    for p in [src] if src.is_file() else discover_records(src):
        try:
            record, ann = load_record(p)
        except (OSError, ValueError) as exc:
            outcome.error(f"{type(exc).__name__}: {exc}", p.stem)
            continue
        if ann is not None:
            refs[record.record_id] = ann.samples
            rates[record.record_id] = record.sampling_rate_hz
    return refs, rates


def _length_table(reports: dict[str, DetectionReport]) -> DetectionReport:
    rows = [(label, rep.aggregate.counts) for label, rep in reports.items()]
    return report(rows, split="pt window lengths", sort_rows=False)


def _write_length_report(out: Path, reports: dict[str, DetectionReport], show_table: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "schema": "dualqrs-pt-lengths/1",
        "lengths": [{"length": k, **rep.aggregate.as_dict(), "per_record": [r.as_dict() for r in rep.rows]}
                    for k, rep in reports.items()],  # fmt: skip
    }
    for entry in doc["lengths"]:
        entry.pop("record_id")
    (out / "pt_lengths.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    table = _length_table(reports)
    (out / "pt_lengths.csv").write_text(table.to_csv(label="length", include_aggregate=False))
    if show_table:
        print(table.render_table(title="Pan-Tompkins by window length", label="Length", include_aggregate=False), end="")


def _pt_records_from(cfg: RunConfig, args, outcome: Outcome) -> list[PtRecord]:
    recs: list[PtRecord] = []
    if getattr(args, "synthetic", False):
        n = args.n_records if args.n_records is not None else cfg.run.synthetic_records
        dur = args.duration_s if args.duration_s is not None else cfg.run.synthetic_duration_s
        for sc, _ in synthetic_corpus(cfg, n, dur):
            record, ann = synthesize_ecg(sc)
            recs.append(PtRecord(sc.record_id, record.channel_mv(0), record.sampling_rate_hz, ann.samples))
        return recs
    src = Path(args.data_dir)
    if _is_archive(src):
        raise CliError("the window-length protocol needs raw records, not a segment archive")
    paths = [src] if src.is_file() else discover_records(src)
    if not paths:
        raise CliError(f"no records found at {src}")
    for p in paths:
        if cfg.split.side(p.stem) == "excluded":
            continue
        try:
            record, ann = load_record(p)
            if ann is None:
                raise ValueError("no beat annotations found")
        except (OSError, ValueError) as exc:
            outcome.error(f"{type(exc).__name__}: {exc}", p.stem)
            continue
        recs.append(PtRecord(record.record_id, record.channel_mv(cfg.run.channel), record.sampling_rate_hz, ann.samples))
    return recs


def _pt_lengths_one(item: tuple[PtRecord, tuple, dict]):
    rec, lengths, pt = item
    return pan_tompkins.pt_segment_protocol([rec], lengths, PtConfig(**pt))


def run_pt_lengths(recs: list[PtRecord], lengths: Sequence[float], cfg: RunConfig, jobs: int):
    parts = _parallel_map(_pt_lengths_one, [(r, tuple(lengths), cfg.pt.to_dict()) for r in recs], jobs)
    merged: dict[str, DetectionReport] = {}
    for label in [pan_tompkins.length_label(x) for x in lengths]:
        per = [(row.record_id, row.counts) for part in parts for row in part[label].rows]
        merged[label] = report(per, split=f"pt windows of {label}")
    return merged


def _parse_lengths(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"bad --lengths value {text!r}") from None
    if not vals or min(vals) <= 0:
        raise CliError("--lengths must list positive seconds")
    return vals


def cmd_pt_lengths(args, cfg: RunConfig, outcome: Outcome) -> None:
    recs = _pt_records_from(cfg, args, outcome)
    if not recs:
        raise CliError("no annotated records for the window-length protocol")
    reports = run_pt_lengths(recs, _parse_lengths(args.lengths), cfg, args.jobs)
    _write_length_report(Path(args.output), reports, args.table)


def cmd_evaluate(args, cfg: RunConfig, outcome: Outcome) -> None:
    out = Path(args.output)
    if args.pt_lengths:
        if args.annotations is None:
            raise CliError("--pt-lengths needs --annotations pointing at raw records")
        ns = argparse.Namespace(data_dir=args.annotations, synthetic=False)
        recs = _pt_records_from(cfg, ns, outcome)
        if not recs:
            raise CliError("no annotated records for the window-length protocol")
        reports = run_pt_lengths(recs, _parse_lengths(args.lengths), cfg, args.jobs)
        _write_length_report(out, reports, args.table)
        return
    if args.peaks is None or args.annotations is None:
        raise CliError("evaluate needs a peaks CSV and --annotations")
    peaks_path = Path(args.peaks)
    detections = read_peaks_csv(peaks_path)
    refs, rates = _load_references(Path(args.annotations), outcome)
    listed = peaks_path.parent / DETECTED_FILE
    records = json.loads(listed.read_text()) if listed.exists() else sorted(detections)
    counts: dict[str, MatchCounts] = {}
    for rid in records:
        if rid not in refs:
            if args.strict:
                raise CliError(f"no annotations for record {rid}")
            outcome.error("no annotations for record; skipped", rid)
            continue
        counts[rid] = match(detections.get(rid, np.zeros(0, dtype=np.int64)), refs[rid], rates[rid],
                            cfg.run.match_window_ms)  # fmt: skip
    if not counts:
        raise CliError("no record could be evaluated")
    rep = report(counts, split=args.split_name, metadata={"window_ms": cfg.run.match_window_ms})
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(rep.to_json())
    (out / "report.csv").write_text(rep.to_csv())
    if args.table:
        print(rep.render_table(title=args.split_name), end="")
    else:
        print(json.dumps(rep.aggregate.as_dict(), sort_keys=True))


# ----------------------------------------------------------------------------
# self checks


def cmd_gradcheck(args, cfg: RunConfig, outcome: Outcome) -> None:
    from .nn import gradsuite

    res = gradsuite.run_suite(
        seeds=args.seeds, include_network=not args.no_network, network_seeds=args.network_seeds
    )
    summary = res.summary()
    if args.output:
        Path(args.output).mkdir(parents=True, exist_ok=True)
        (Path(args.output) / "gradcheck.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, indent=2, sort_keys=True))
    for f in summary["failures"]:
        outcome.error(f)


def cmd_fuzz_picker(args, cfg: RunConfig, outcome: Outcome) -> None:
    count, bad = picker.fuzz_compare(args.count, args.seed, args.fs, cfg.picker)
    summary = {"sequences": count, "mismatches": bad}
    print(json.dumps(summary, sort_keys=True))
    if bad:
        outcome.error(f"pick and pick_oracle disagree on {len(bad)} of {count} sequences")


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config with sections model/picker/pt/denoise/label/split/synth/run")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (JSON literal); repeatable")  # fmt: skip
    common.add_argument("--seed", type=int, help="master seed (model and synthetic corpus)")
    common.add_argument("--jobs", type=int, default=1, help="record-level worker processes")
    common.add_argument("--json-errors", action="store_true", help="emit the error list as JSON on stderr")
    common.add_argument("--strict", action="store_true", help="treat any per-record failure as fatal")

    ap = argparse.ArgumentParser(prog="dualqrs", description="Dual-channel U-Net + BiLSTM R-peak detection")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="denoise, segment and label records into an archive")
    p.add_argument("data_dir", nargs="?", help="directory of WFDB (.hea) or CSV records")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--synthetic", action="store_true", help="generate a seeded synthetic corpus instead")
    p.add_argument("--n-records", type=int)
    p.add_argument("--duration-s", type=float, help="synthetic record length")
    p.add_argument("--emit-signals", action="store_true", help="write raw/baseline-removed/denoised CSV per record")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", parents=[common], help="train on the archive's training side")
    p.add_argument("archive")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--ablation", choices=("single-channel", "no-bilstm"))
    p.add_argument("--label-mode", choices=("smooth", "binary"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", parents=[common], help="detect R peaks in an archive or raw records")
    p.add_argument("input", help="segment archive, record directory or single record")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--detector", choices=("net", "pt"), default="net")
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--emit-probabilities", action="store_true")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", parents=[common], help="score peaks against annotations")
    p.add_argument("peaks", nargs="?", help="peaks.csv from detect")
    p.add_argument("--annotations", help="segment archive or annotated record directory")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--table", action="store_true", help="print a text table")
    p.add_argument("--split-name", default="")
    p.add_argument("--pt-lengths", action="store_true", help="run the Pan-Tompkins window-length protocol")
    p.add_argument("--lengths", default="5,10,20,30,300")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pt-lengths", parents=[common], help="Pan-Tompkins accuracy per window length")
    p.add_argument("data_dir", nargs="?")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--n-records", type=int)
    p.add_argument("--duration-s", type=float)
    p.add_argument("--lengths", default="5,10,20,30,300")
    p.add_argument("--table", action="store_true")
    p.set_defaults(func=cmd_pt_lengths)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference sweep of every op")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--network-seeds", type=int)
    p.add_argument("--no-network", action="store_true")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("fuzz-picker", parents=[common], help="compare pick with pick_oracle on random traces")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--fs", type=float, default=360.0)
    p.set_defaults(func=cmd_fuzz_picker)
    return ap


def _apply_flags(args, cfg: RunConfig) -> RunConfig:
    if args.seed is not None:
        cfg.run.seed = args.seed
        cfg.model.seed = args.seed
    if getattr(args, "ablation", None) == "single-channel":
        cfg.model.input_channels = 1
    elif getattr(args, "ablation", None) == "no-bilstm":
        cfg.model.use_bilstm = False
    if getattr(args, "label_mode", None):
        cfg.label.mode = args.label_mode
        cfg.model.label_mode = args.label_mode
    for flag, attr in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "lr")):
        if getattr(args, flag, None) is not None:
            setattr(cfg.model, attr, getattr(args, flag))
    if getattr(args, "max_steps", None) is not None:
        cfg.run.max_steps = args.max_steps
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is None and args.command == "fuzz-picker":
        args.seed = 0
    outcome = Outcome()
    try:
        cfg = _apply_flags(args, load_config(args.config, args.overrides)).validate()
        out = getattr(args, "output", None)
        if out:
            _setup_output(Path(out), cfg)
        args.func(args, cfg, outcome)
    except CliError as exc:
        outcome.error(str(exc))
    except (ValueError, FloatingPointError, RuntimeError) as exc:
        outcome.error(f"{type(exc).__name__}: {exc}")
    finally:
        for h in list(logging.getLogger().handlers):
            if isinstance(h, logging.FileHandler):
                logging.getLogger().removeHandler(h)
                h.close()
    if outcome.errors:
        if args.json_errors:
            sys.stderr.write(json.dumps({"errors": outcome.errors}, sort_keys=True) + "\n")
        else:
            for e in outcome.errors:
                sys.stderr.write(f"error: {e.get('record', '') + ': ' if 'record' in e else ''}{e['message']}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
