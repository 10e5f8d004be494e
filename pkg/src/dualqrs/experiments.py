"""Desk-scale experiments on synthetic data: the overfit sanity run and the
polarity comparison that reuses its model."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import labeling, model, picker
from .evaluation import MatchCounts, match, metrics
from .ingest import SynthConfig, synthesize_ecg
from .labeling import Segment
from .model import ModelConfig
from .preprocess import preprocess

FS = 360.0


def synthetic_segments(
    count: int,
    seed: int,
    inverted_every: int = 2,
    duration_s: float = 10.0,
) -> list[Segment]:
    """One labeled 10 s segment per synthetic record; every ``inverted_every``-th record is inverted.

    Record length is one window plus a second of context on each side so
    the preprocessing edge effects stay outside the segment.
    """
    rng = np.random.default_rng([seed, 7])
    out = []
    for i in range(count):
        cfg = SynthConfig(
            duration_s=duration_s + 2.0,
            heart_rate_bpm=float(rng.uniform(55, 100)),
            rr_jitter_fraction=0.05,
            qrs_amplitude_mv=float(rng.uniform(0.7, 1.4)),
            white_noise_std=0.02,
            baseline_wander=(0.15, 0.3),
            invert_polarity=bool(inverted_every) and i % inverted_every == inverted_every - 1,
            rng_seed=int(rng.integers(2**31)),
            record_id=f"syn{seed}-{i}",
        )
        record, ann = synthesize_ecg(cfg)
        clean = preprocess(record.channel_mv(0), FS)
        lo, hi = int(FS), int(FS) + int(round(duration_s * FS))
        raw = labeling.RawSegment(cfg.record_id, lo, clean[lo:hi], ann.window(lo, hi) - lo)
        out.append(labeling.build_segment(raw))
    return out


def detect_counts(
    net: model.UNetBiLSTM,
    segments: Sequence[Segment],
    fs: float = FS,
    picker_config: Optional[picker.PickerConfig] = None,
    window_ms: float = 75.0,
) -> MatchCounts:
    x = np.stack([s.channels[: net.config.input_channels] for s in segments])
    probs = net.forward(x, batch_size=net.config.batch_size).probabilities
    total = MatchCounts()
    for seg, p in zip(segments, probs):
        found = picker.pick(p, fs, picker_config).indices
        total = total + match(found, seg.r_peaks, fs, window_ms)
    return total


@dataclass
class OverfitResult:
    steps: int
    counts: MatchCounts
    loss_history: list = field(default_factory=list)
    seconds: float = 0.0
    checkpoint: bytes = b""

    @property
    def perfect(self) -> bool:
        return self.counts.fp == 0 and self.counts.fn == 0 and self.counts.tp > 0


def overfit_config(seed: int = 0) -> ModelConfig:
    """Full-size dual-channel U-Net + BiLSTM; one batch holds all 8 segments."""
    return ModelConfig(seed=seed, batch_size=8, epochs=500, patience=500, lr=3e-3)


def run_overfit(
    segments: Optional[Sequence[Segment]] = None,
    config: Optional[ModelConfig] = None,
    max_steps: int = 500,
    check_every: int = 10,
) -> tuple[model.UNetBiLSTM, OverfitResult]:
    """Train until every seeded peak is found with no false positives, or ``max_steps``."""
    cfg = config or overfit_config()
    segs = list(segments) if segments is not None else synthetic_segments(8, seed=cfg.seed)
    net = model.build(cfg)
    state = {"counts": MatchCounts(), "losses": []}

    def callback(step, current):
        if step % check_every:
            return False
        state["counts"] = detect_counts(current, segs)
        c = state["counts"]
        return c.fp == 0 and c.fn == 0

    t0 = time.perf_counter()
    res = model.train(net, segs, (), cfg, max_steps=max_steps, callback=callback)
    if not res.stopped_by_callback:
        state["counts"] = detect_counts(net, segs)
    out = OverfitResult(
        steps=res.steps,
        counts=state["counts"],
        loss_history=[r.train_loss for r in res.history],
        seconds=time.perf_counter() - t0,
        checkpoint=net.checkpoint(),
    )
    return net, out


def polarity_gap(net: model.UNetBiLSTM, segments: Sequence[Segment]) -> tuple[float, float]:
    """Se on the segments as given and on globally inverted copies (channel rows swapped)."""
    se_up = metrics(detect_counts(net, segments)).se
    se_inv = metrics(detect_counts(net, [s.inverted() for s in segments])).se
    return se_up, se_inv
