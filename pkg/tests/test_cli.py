import csv
import json

import pytest

from conftest import record_to_wfdb
from dualqrs import cli, labeling
from dualqrs.ingest import SynthConfig, synthesize_ecg

TINY = ["--set", "model.base_channels=2", "--set", "model.lstm_units=8", "--set", "model.depth=3",
        "--set", "model.relax_invariants=true"]  # fmt: skip


def run(capsys, *argv):
    rc = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return rc, out, err


@pytest.fixture(scope="module")
def archive(tmp_path_factory):
    out = tmp_path_factory.mktemp("arch")
    assert cli.main(["prepare", "--synthetic", "-o", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(archive, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert cli.main(["train", str(archive), "-o", str(out), "--max-steps", "2", *TINY]) == 0
    return out


@pytest.fixture(scope="module")
def wfdb_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("wfdb")
    for i, rid in enumerate(["100", "101"]):
        rec, ann = synthesize_ecg(SynthConfig(duration_s=40.0, heart_rate_bpm=65 + 10 * i, rng_seed=i,
                                              white_noise_std=0.02, record_id=rid))  # fmt: skip
        record_to_wfdb(d, rid, rec.channel_mv(0), ann)
    return d


# -- prepare --------------------------------------------------------------------------------


def test_prepare_synthetic_counts(archive):
    summary = json.loads((archive / "prepare_summary.json").read_text())
    assert summary == {"failed": [], "records": 10, "segments": 300}
    manifest = json.loads((archive / labeling.MANIFEST_FILE).read_text())
    assert sorted(set(manifest["sides"].values())) == ["test", "train"]
    cfg = json.loads((archive / cli.CONFIG_FILE).read_text())
    assert set(cfg) == set(cli.RunConfig.SECTIONS)
    assert (archive / cli.LOG_FILE).exists()


def test_prepare_deterministic_except_log(archive, tmp_path):
    assert cli.main(["prepare", "--synthetic", "-o", str(tmp_path)]) == 0
    names = sorted(p.name for p in archive.iterdir() if p.name != cli.LOG_FILE)
    assert names == sorted(p.name for p in tmp_path.iterdir() if p.name != cli.LOG_FILE)
    for name in names:
        assert (archive / name).read_bytes() == (tmp_path / name).read_bytes(), name


def test_prepare_empty_dir_json_error(tmp_path, capsys):
    (tmp_path / "data").mkdir()
    rc, _, err = run(capsys, "prepare", tmp_path / "data", "-o", tmp_path / "out", "--json-errors")
    assert rc == 1
    assert "no .hea or .csv" in json.loads(err)["errors"][0]["message"]


def test_prepare_wfdb_and_signals(wfdb_dir, tmp_path, capsys):
    rc, out, _ = run(capsys, "prepare", wfdb_dir, "-o", tmp_path, "--emit-signals")
    assert rc == 0
    assert json.loads(out)["segments"] == 8
    m = json.loads((tmp_path / labeling.MANIFEST_FILE).read_text())
    assert m["sides"] == {"100": "test", "101": "train"}
    rows = list(csv.reader(open(tmp_path / "signals" / "100.csv")))
    assert rows[0] == ["sample", "raw_mv", "baseline_removed_mv", "denoised_mv"]
    assert len(rows) == 1 + 40 * 360


def test_prepare_skips_paced_and_reports_bad_record(wfdb_dir, tmp_path, capsys):
    d = tmp_path / "d"
    d.mkdir()
    for f in wfdb_dir.iterdir():
        (d / f.name).write_bytes(f.read_bytes())
    rec, ann = synthesize_ecg(SynthConfig(duration_s=20.0, record_id="102"))
    record_to_wfdb(d, "102", rec.channel_mv(0), ann)  # paced, excluded
    (d / "101.dat").write_bytes(b"\x00" * 10)  # truncated
    rc, _, err = run(capsys, "prepare", d, "-o", tmp_path / "o")
    assert rc == 1 and "101" in err
    m = json.loads((tmp_path / "o" / labeling.MANIFEST_FILE).read_text())
    assert m["records"] == ["100"]


def test_unknown_config_key(tmp_path, capsys):
    rc, _, err = run(capsys, "prepare", "--synthetic", "-o", tmp_path, "--set", "model.widht=3")
    assert rc == 1 and "widht" in err


# -- train / detect / evaluate ------------------------------------------------------------------


def test_train_outputs(trained):
    s = json.loads((trained / "train_summary.json").read_text())
    assert s["steps"] == 2
    assert s["train_segments"] + s["val_segments"] == 150
    assert s["val_segments"] == 15
    assert (trained / cli.CHECKPOINT_FILE).stat().st_size > 0


@pytest.mark.parametrize("ablation", ["single-channel", "no-bilstm"])
def test_train_ablations(archive, tmp_path, ablation):
    assert cli.main(["train", str(archive), "-o", str(tmp_path), "--max-steps", "1", "--ablation", ablation, *TINY]) == 0
    cfg = json.loads((tmp_path / cli.CONFIG_FILE).read_text())["model"]
    assert cfg["input_channels"] == (1 if ablation == "single-channel" else 2)
    assert cfg["use_bilstm"] == (ablation != "no-bilstm")


def test_detect_net_then_evaluate(archive, trained, tmp_path, capsys):
    det = tmp_path / "det"
    rc, out, _ = run(capsys, "detect", archive, "-o", det, "--checkpoint", trained / cli.CHECKPOINT_FILE,
                     "--emit-probabilities")  # fmt: skip
    assert rc == 0
    assert json.loads((det / cli.DETECTED_FILE).read_text()) == [f"syn{i:03d}" for i in range(5, 10)]
    probs = list(csv.DictReader(open(det / "probabilities.csv")))
    assert len(probs) == 5 * 30 * 3600
    rc, out, _ = run(capsys, "evaluate", det / cli.PEAKS_FILE, "--annotations", archive, "-o", tmp_path / "ev")
    assert rc == 0
    rep = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert [r["record_id"] for r in rep["rows"]] == [f"syn{i:03d}" for i in range(5, 10)]


def test_detect_hash_mismatch(archive, trained, tmp_path, capsys):
    rc, _, err = run(capsys, "detect", archive, "-o", tmp_path, "--checkpoint", trained / cli.CHECKPOINT_FILE,
                     *TINY, "--set", "model.use_bilstm=false")  # fmt: skip
    assert rc == 1 and "hash mismatch" in err


def test_detect_needs_checkpoint(archive, tmp_path, capsys):
    rc, _, err = run(capsys, "detect", archive, "-o", tmp_path)
    assert rc == 1 and "--checkpoint" in err


def test_detect_pt_on_records_scores_perfectly(wfdb_dir, tmp_path, capsys):
    rc, _, _ = run(capsys, "detect", wfdb_dir, "-o", tmp_path / "d", "--detector", "pt")
    assert rc == 0
    rc, out, _ = run(capsys, "evaluate", tmp_path / "d" / cli.PEAKS_FILE, "--annotations", wfdb_dir,
                     "-o", tmp_path / "e", "--table", "--split-name", "Test set")  # fmt: skip
    assert rc == 0 and "Test set" in out
    rep = json.loads((tmp_path / "e" / "report.json").read_text())
    assert rep["aggregate"]["Se"] >= 99.0


def test_evaluate_identical_peaks(archive, tmp_path, capsys):
    m = json.loads((archive / labeling.MANIFEST_FILE).read_text())
    rows = [(rid, "", i, i, "1.0") for rid in ("syn000", "syn001") for i in m["references"][rid]]
    cli._write_csv(tmp_path / "peaks.csv", ("record_id", "segment_id", "local_index", "global_index", "probability"),
                   rows)  # fmt: skip
    rc, out, _ = run(capsys, "evaluate", tmp_path / "peaks.csv", "--annotations", archive, "-o", tmp_path / "o")
    assert rc == 0
    agg = json.loads(out)
    assert (agg["Se"], agg["+P"], agg["Accuracy"]) == (100.0, 100.0, 100.0)
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    table = list(csv.DictReader(open(tmp_path / "o" / "report.csv")))
    assert [int(r["TP"]) for r in table][:-1] == [r["TP"] for r in rep["rows"]]


def test_evaluate_pt_lengths(wfdb_dir, tmp_path, capsys):
    rc, out, _ = run(capsys, "evaluate", "--pt-lengths", "--annotations", wfdb_dir, "-o", tmp_path, "--table")
    assert rc == 0
    doc = json.loads((tmp_path / "pt_lengths.json").read_text())
    assert [e["length"] for e in doc["lengths"]] == ["5 s", "10 s", "20 s", "30 s", "5 min"]
    table = list(csv.DictReader(open(tmp_path / "pt_lengths.csv")))
    assert [r["length"] for r in table] == [e["length"] for e in doc["lengths"]]
    for row, e in zip(table, doc["lengths"]):
        assert (int(row["TP"]), int(row["FP"]), int(row["FN"])) == (e["TP"], e["FP"], e["FN"])


def test_pt_lengths_synthetic(tmp_path, capsys):
    rc, _, _ = run(capsys, "pt-lengths", "--synthetic", "--n-records", 2, "--duration-s", 60, "--lengths", "5,30",
                   "-o", tmp_path)  # fmt: skip
    assert rc == 0
    doc = json.loads((tmp_path / "pt_lengths.json").read_text())
    assert len(doc["lengths"]) == 2


def test_bad_lengths(tmp_path, capsys):
    rc, _, err = run(capsys, "pt-lengths", "--synthetic", "-o", tmp_path, "--lengths", "5,-1")
    assert rc == 1 and "positive" in err


# -- self checks ------------------------------------------------------------------------------------


def test_fuzz_picker_command(capsys):
    rc, out, _ = run(capsys, "fuzz-picker", "--count", 50)
    assert rc == 0 and json.loads(out) == {"mismatches": [], "sequences": 50}


def test_gradcheck_command(tmp_path, capsys):
    rc, out, _ = run(capsys, "gradcheck", "--seeds", 1, "--no-network", "-o", tmp_path)
    assert rc == 0
    doc = json.loads((tmp_path / "gradcheck.json").read_text())
    assert doc["failures"] == []
