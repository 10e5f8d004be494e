"""Acceptance criteria, each checked at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -s`` to see the PASS/FAIL line of
every criterion as it finishes; the same lines are repeated in the terminal
summary. Criteria that need the MIT-BIH Arrhythmia Database run only when
``QRS_MITDB_DIR`` points at a directory of its WFDB files.
"""

import hashlib
import json
import os
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from conftest import record_to_wfdb, report_criterion
from dualqrs import cli, experiments, labeling, picker
from dualqrs.evaluation import MatchCounts, match, metrics
from dualqrs.ingest import SynthConfig, discover_records, load_record, synthesize_components, synthesize_ecg
from dualqrs.labeling import AAMI_TEST, AAMI_TRAIN, PACED
from dualqrs.nn import gradsuite
from dualqrs.pan_tompkins import PtRecord, pt_detect
from dualqrs.preprocess import dwt_forward, dwt_inverse

MITDB = os.environ.get("QRS_MITDB_DIR")
needs_mitdb = pytest.mark.skipif(not MITDB, reason="QRS_MITDB_DIR not set")


# -- runners; each returns (result, fingerprint) so reruns can be compared byte for byte ---------


def run_dwt_reconstruction(count=1000, seed=0):
    rng = np.random.default_rng(seed)
    h = hashlib.sha256()
    errors = np.empty(count)
    for k in range(count):
        x = rng.normal(size=int(rng.integers(32, 4097))) * rng.uniform(0.01, 100)
        y = dwt_inverse(dwt_forward(x, "db4", 5))
        errors[k] = np.max(np.abs(y - x))
        h.update(y.tobytes())
    return errors, h.hexdigest()


def run_gradients():
    t0 = time.perf_counter()
    res = gradsuite.run_suite(seeds=20, include_network=True, network_seeds=20)
    seconds = time.perf_counter() - t0
    summary = res.summary()
    h = hashlib.sha256(json.dumps(summary, sort_keys=True).encode())
    for c in res.cases:
        h.update(f"{c.name}:{c.seed}:{c.redraws}:{c.report.max_rel_error!r}".encode())
    return (res, summary, seconds), h.hexdigest()


def run_overfit():
    segs = experiments.synthetic_segments(8, seed=0)
    net, res = experiments.run_overfit(segs, experiments.overfit_config(0), max_steps=500, check_every=10)
    h = hashlib.sha256(res.checkpoint)
    h.update(repr((res.steps, res.counts, res.loss_history)).encode())
    return (net, res), h.hexdigest()


def run_picker_fuzz(count=1000, seed=0):
    h = hashlib.sha256()
    bad = []
    for k in range(count):
        p = picker.fuzz_sequence(np.random.default_rng([seed, k]), 360.0)
        a, b = picker.pick(p, 360.0), picker.pick_oracle(p, 360.0)
        if a != b:
            bad.append(k)
        h.update(a.indices.tobytes())
        h.update(a.probabilities.tobytes())
    return bad, h.hexdigest()


@lru_cache(maxsize=None)
def first_run(name):
    return {"dwt": run_dwt_reconstruction, "grad": run_gradients, "overfit": run_overfit,
            "picker": run_picker_fuzz}[name]()  # fmt: skip


# -- criterion 1 ----------------------------------------------------------------------------------


def test_criterion_01_metric_examples():
    cases = [((2183, 10, 12), (99.45, 99.54, 99.00)), ((49470, 141, 220), (99.56, 99.72, 99.28))]
    ok, parts = True, []
    for counts, want in cases:
        m = metrics(MatchCounts(*counts))
        got = (m.se, m.ppv, m.accuracy)
        ok = ok and all(abs(v - w) <= 0.01 for v, w in zip(got, want))
        parts.append(f"{counts} -> Se {got[0]:.4f} +P {got[1]:.4f} Acc {got[2]:.4f}")
    report_criterion("1 metrics examples (+-0.01)", ok, "; ".join(parts))
    assert ok


# -- criterion 2 ----------------------------------------------------------------------------------


def _synthetic_mitdb(directory: Path) -> None:
    """Stand-in corpus: 48 records of 650000 samples under the MIT-BIH record numbers."""
    for i, rid in enumerate(sorted(AAMI_TRAIN + AAMI_TEST + PACED)):
        rec, ann = synthesize_ecg(SynthConfig(duration_s=650000 / 360.0, heart_rate_bpm=60.0 + i % 40, rng_seed=i,
                                              white_noise_std=0.02, record_id=rid))  # fmt: skip
        record_to_wfdb(directory, rid, rec.channel_mv(0), ann)


def test_criterion_02_segment_counts(tmp_path):
    t0 = time.perf_counter()
    if MITDB:
        data, source = Path(MITDB), "MITDB"
    else:
        data, source = tmp_path / "data", "synthetic 30 min records"
        data.mkdir()
        _synthetic_mitdb(data)
    rc = cli.main(["prepare", str(data), "-o", str(tmp_path / "arch")])
    seconds = time.perf_counter() - t0
    m = json.loads((tmp_path / "arch" / labeling.MANIFEST_FILE).read_text())
    per_side = {"train": 0, "test": 0}
    for s in m["segments"]:
        per_side[m["sides"][s["record_id"]]] += 1
    paced_skipped = not set(PACED) & set(m["records"])
    ok = (rc == 0 and len(m["records"]) == 44 and m["count"] == 7920 and per_side == {"train": 3960, "test": 3960}
          and paced_skipped and seconds < 60)  # fmt: skip
    report_criterion("2 segmentation counts", ok,
                     f"{source}: {len(m['records'])} records, {m['count']} segments, train {per_side['train']}, "
                     f"test {per_side['test']}, paced excluded {paced_skipped}, {seconds:.1f} s")  # fmt: skip
    assert ok


# -- criterion 3 ----------------------------------------------------------------------------------


def test_criterion_03_dwt_perfect_reconstruction():
    errors, _ = first_run("dwt")
    ok = errors.size == 1000 and errors.max() <= 1e-8
    report_criterion("3 DWT reconstruction (<=1e-8)", ok, f"{errors.size} signals, max error {errors.max():.3e}")
    assert ok


# -- criterion 4 ----------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_04_gradient_suite():
    (res, summary, seconds), _ = first_run("grad")
    op_seeds = {c.seed for c in res.cases if c.name != "network"}
    net_cases = [c for c in res.cases if c.name == "network"]
    worst = summary["max_rel_error"]
    worst_op = max(v for k, v in worst.items() if k != "network")
    ok = (res.passed and len(op_seeds) >= 20 and len(net_cases) >= 20 and worst_op <= gradsuite.OP_TOLERANCE
          and worst["network"] <= gradsuite.NET_TOLERANCE and seconds < 300)  # fmt: skip
    report_criterion("4 gradient suite (ops<=1e-4, network<=1e-3)", ok,
                     f"{summary['checks']} checks, worst op {worst_op:.2e}, network {worst['network']:.2e}, "
                     f"{len(summary['failures'])} failures, {seconds:.0f} s")  # fmt: skip
    assert ok


# -- criterion 5 ----------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_05_overfit_eight_segments():
    (net, res), _ = first_run("overfit")
    m = metrics(res.counts)
    ok = res.perfect and res.steps <= 500 and res.seconds < 600
    report_criterion("5 overfit 8 segments", ok,
                     f"Se {m.se:.2f} +P {m.ppv:.2f} at step {res.steps}, final loss {res.loss_history[-1]:.4f}, "
                     f"{res.seconds:.0f} s")  # fmt: skip
    assert ok


# -- criterion 6 ----------------------------------------------------------------------------------


def test_criterion_06_picker_matches_oracle():
    bad, _ = first_run("picker")
    report_criterion("6 picker equals oracle", not bad, f"1000 sequences, {len(bad)} mismatches")
    assert not bad


# -- criterion 7 ----------------------------------------------------------------------------------


def test_criterion_07_pan_tompkins_rate_sweep():
    total = MatchCounts()
    worst = []
    for bpm in range(40, 181, 10):
        parts = synthesize_components(SynthConfig(duration_s=30.0, heart_rate_bpm=float(bpm), rng_seed=bpm))
        c = match(pt_detect(parts.clean, 360.0).peaks.indices, parts.r_peaks, 360.0)
        total = total + c
        if c.fp or c.fn:
            worst.append(bpm)
    m = metrics(total)
    ok = total.fp == 0 and total.fn == 0
    report_criterion("7a Pan-Tompkins 40-180 bpm sweep", ok,
                     f"15 rates x 30 s, Se {m.se:.2f} +P {m.ppv:.2f}, imperfect rates {worst}")  # fmt: skip
    assert ok


def _mitdb_records():
    spec = labeling.SplitSpec()
    recs = []
    for p in discover_records(MITDB):
        if spec.side(p.stem) == "excluded":
            continue
        record, ann = load_record(p)
        recs.append(PtRecord(record.record_id, record.channel_mv(0), record.sampling_rate_hz, ann.samples))
    return recs


@needs_mitdb
def test_criterion_07b_pan_tompkins_length_trend():
    cfg = cli.RunConfig()
    reports = cli.run_pt_lengths(_mitdb_records(), [5.0, 10.0, 20.0, 30.0, 300.0], cfg, jobs=1)
    acc = [rep.aggregate.metrics.accuracy for rep in reports.values()]
    ok = all(b >= a for a, b in zip(acc, acc[1:]))
    report_criterion("7b Pan-Tompkins accuracy rises with window length", ok,
                     ", ".join(f"{k} {a:.2f}" for k, a in zip(reports, acc)))  # fmt: skip
    assert ok


# -- criterion 8 ----------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_08_polarity_gap():
    (net, res), _ = first_run("overfit")
    fresh = experiments.synthetic_segments(40, seed=1000, inverted_every=0)
    se_up, se_inv = experiments.polarity_gap(net, fresh)
    gap = abs(se_up - se_inv)
    ok = gap <= 2.0
    report_criterion("8 polarity gap (<=2 Se points)", ok,
                     f"40 unseen segments, Se upright {se_up:.2f}, inverted {se_inv:.2f}, gap {gap:.2f}")  # fmt: skip
    assert ok


# -- criterion 9 ----------------------------------------------------------------------------------


@pytest.mark.slow
@needs_mitdb
def test_criterion_09_full_mitdb(tmp_path):
    arch, train, det, ev = (tmp_path / n for n in ("arch", "train", "det", "eval"))
    assert cli.main(["prepare", MITDB, "-o", str(arch)]) == 0
    assert cli.main(["train", str(arch), "-o", str(train)]) == 0
    assert cli.main(["detect", str(arch), "-o", str(det), "--checkpoint", str(train / cli.CHECKPOINT_FILE)]) == 0
    assert cli.main(["evaluate", str(det / cli.PEAKS_FILE), "--annotations", str(arch), "-o", str(ev)]) == 0
    agg = json.loads((ev / "report.json").read_text())["aggregate"]
    ok = agg["Se"] >= 99.0 and agg["+P"] >= 99.0
    report_criterion("9 full MITDB test split (Se, +P >= 99)", ok, f"Se {agg['Se']:.2f} +P {agg['+P']:.2f}")
    assert ok


# -- criterion 10 ---------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_10_bit_identical_reruns():
    same = {}
    for name, runner in [("dwt", run_dwt_reconstruction), ("grad", run_gradients), ("overfit", run_overfit),
                         ("picker", run_picker_fuzz)]:  # fmt: skip
        same[name] = first_run(name)[1] == runner()[1]
    ok = all(same.values())
    report_criterion("10 criteria 3-6 bit-identical on rerun", ok, ", ".join(f"{k} {v}" for k, v in same.items()))
    assert ok
