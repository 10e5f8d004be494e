import os
from pathlib import Path

import numpy as np
import pytest
import wfdb
from hypothesis import given, settings
from hypothesis import strategies as st

from dualqrs.ingest import (
    BEAT_CODES,
    SynthConfig,
    UnsupportedFormatError,
    WfdbParseError,
    discover_records,
    encode_annotations,
    encode_format212,
    load_record,
    parse_annotations,
    parse_csv_record,
    parse_format212,
    parse_wfdb_header,
    read_record,
    synthesize_components,
    synthesize_ecg,
    write_csv_record,
)

MITDB = os.environ.get("QRS_MITDB_DIR")

HEADER_100 = """100 2 360 650000 0:0:0 0/0/0
100.dat 212 200 11 1024 995 -22131 0 MLII
100.dat 212 200 11 1024 1011 20052 0 V5
# 69 M 1085 1629 x1
# Aldomet, Inderal
"""


# -- header ------------------------------------------------------------------


def test_header_record_100():
    h = parse_wfdb_header(HEADER_100.encode())
    assert (h.n_channels, h.n_samples, h.sampling_rate_hz) == (2, 650000, 360.0)
    assert h.format_tag == 212
    assert h.gains == [200.0, 200.0]
    assert [s.adc_zero for s in h.signals] == [1024, 1024]
    assert h.signals[0].description == "MLII"
    assert h.comments[0].startswith("69 M")


def test_header_zero_channels_rejected():
    with pytest.raises(WfdbParseError, match="line 1"):
        parse_wfdb_header("rec 0 360 100\n")


def test_header_hand_written_single_channel():
    h = parse_wfdb_header("tiny 1 250 100\ntiny.dat 212 100 12 0 0 0 0 lead\n")
    assert (h.record_id, h.n_channels, h.sampling_rate_hz, h.n_samples) == ("tiny", 1, 250.0, 100)
    assert h.gains == [100.0]


def test_header_unsupported_format():
    with pytest.raises(UnsupportedFormatError, match="unsupported format 16"):
        parse_wfdb_header("r 1 360 10\nr.dat 16 200 16 0 0 0 0 x\n")


def test_header_malformed_line_names_line_number():
    with pytest.raises(WfdbParseError, match="line 3"):
        parse_wfdb_header("r 2 360 10\nr.dat 212 200 11 0 0 0 0 a\nr.dat 212 zz 11 0 0 0 0 b\n")


def test_header_missing_signal_lines():
    with pytest.raises(WfdbParseError, match="2 signals declared, 1 described"):
        parse_wfdb_header("r 2 360 10\nr.dat 212 200 11 0 0 0 0 a\n")


# -- format 212 ----------------------------------------------------------------


def test_format212_zero_triple():
    assert parse_format212(bytes([0, 0, 0])).tolist() == [[0, 0]]


def test_format212_sign_extension():
    assert parse_format212(bytes([0xFF, 0x0F, 0x00])).tolist() == [[-1, 0]]


def test_format212_high_nibble_goes_to_second_sample():
    # s2 = 0x01 | (0xF << 8) = 0xF01 -> -255
    assert parse_format212(bytes([0x00, 0xF0, 0x01])).tolist() == [[0, -255]]


def test_format212_partial_triple_reports_offset():
    with pytest.raises(WfdbParseError, match="byte offset 3"):
        parse_format212(bytes(5))


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=300).map(lambda b: b[: len(b) - len(b) % 3]))
def test_format212_round_trip_bytes(blob):
    assert encode_format212(parse_format212(blob)) == blob


def test_format212_against_wfdb_reader(tmp_path, rng):
    sig = rng.integers(-2048, 2048, size=(257, 2))
    wfdb.wrsamp("rt", fs=360, units=["mV", "mV"], sig_name=["a", "b"], d_signal=sig, fmt=["212", "212"],
                adc_gain=[200.0, 200.0], baseline=[0, 0], write_dir=str(tmp_path))
    ours, _ = read_record(tmp_path / "rt")
    ref = wfdb.rdrecord(str(tmp_path / "rt"), physical=False)
    assert np.array_equal(ours.samples, ref.d_signal.T)
    assert np.array_equal(ours.samples, sig.T)
    ref_phys = wfdb.rdrecord(str(tmp_path / "rt"))
    np.testing.assert_allclose(ours.channel_mv(0), ref_phys.p_signal[:, 0], atol=1e-12)


def test_read_record_with_adc_offset(tmp_path):
    from conftest import write_wfdb

    adu = np.array([[1024, 1224, 824, 1024], [0, 1, 2, 3]])
    write_wfdb(tmp_path, "off", adu, 360.0, [1])
    rec, ann = read_record(tmp_path / "off")
    # header baseline defaults to the ADC zero
    np.testing.assert_allclose(rec.channel_mv(0), [0.0, 1.0, -1.0, 0.0])
    assert ann.samples.tolist() == [1]


# -- annotations ---------------------------------------------------------------


def test_annotations_increments():
    words = np.array([(1 << 10) | 10, (1 << 10) | 20, 0], dtype="<u2")
    ann = parse_annotations(words.tobytes())
    assert ann.samples.tolist() == [10, 30]
    assert ann.symbols == ["N", "N"]


def test_annotations_empty_stream():
    assert len(parse_annotations(b"\x00\x00")) == 0
    assert len(parse_annotations(b"")) == 0


def test_annotations_unknown_code_rejected():
    words = np.array([(55 << 10) | 3, 0], dtype="<u2")
    with pytest.raises(WfdbParseError, match="unknown annotation code 55"):
        parse_annotations(words.tobytes())


def test_annotations_skip_and_aux_round_trip():
    entries = [(5, 1), (5000, 28, "(AFIB"), (70000, 5), (70001, 14)]
    ann = parse_annotations(encode_annotations(entries))
    assert ann.samples.tolist() == [5, 70000]
    assert ann.codes.tolist() == [1, 5]
    assert [(o.sample, o.symbol, o.aux) for o in ann.other] == [(5000, "+", "(AFIB"), (70001, "~", "")]


def test_annotations_against_wfdb_reader(tmp_path, rng):
    symbols = np.array(["N", "V", "A", "+", "~", "|", "L", "/", "Q", "x"])
    gaps = rng.integers(1, 3000, size=400)
    samples = np.cumsum(gaps)
    sym = rng.choice(symbols, size=samples.size)
    aux = [("(N" if s == "+" else "") for s in sym]
    wfdb.wrann("ann", "atr", samples, symbol=list(sym), aux_note=aux, write_dir=str(tmp_path))
    ours = parse_annotations((tmp_path / "ann.atr").read_bytes())
    ref = wfdb.rdann(str(tmp_path / "ann"), "atr")
    beat_syms = {"N", "L", "R", "B", "A", "a", "J", "S", "V", "r", "F", "e", "j", "n", "E", "/", "f", "Q", "?"}
    is_beat = np.array([s in beat_syms for s in ref.symbol])
    assert np.array_equal(ours.samples, ref.sample[is_beat])
    assert ours.symbols == [s for s, b in zip(ref.symbol, is_beat) if b]
    assert [o.sample for o in ours.other] == ref.sample[~is_beat].tolist()
    assert [o.aux for o in ours.other if o.symbol == "+"] == ["(N"] * int(np.sum(sym == "+"))


def test_beat_code_set_size():
    assert len(BEAT_CODES) == 19


# -- CSV fallback ----------------------------------------------------------------


def test_csv_round_trip():
    rec, ann = synthesize_ecg(SynthConfig(duration_s=3.0, white_noise_std=0.01, rng_seed=3))
    back, ann2 = parse_csv_record(write_csv_record(rec, ann), fs=360.0, record_id=rec.record_id)
    np.testing.assert_array_equal(back.channel_mv(0), rec.channel_mv(0))
    assert np.array_equal(ann2.samples, ann.samples)


def test_csv_without_annotations():
    rec, ann = parse_csv_record("0,0.5\n1,0.25\n2,-1\n")
    assert ann is None
    assert rec.channel_mv(0).tolist() == [0.5, 0.25, -1.0]


def test_csv_rejects_gaps():
    with pytest.raises(ValueError, match="consecutive"):
        parse_csv_record("0,1\n2,1\n")


def test_discover_prefers_headers(tmp_path):
    from conftest import write_wfdb

    write_wfdb(tmp_path, "7", np.zeros((2, 10), dtype=int), 360.0, [2])
    (tmp_path / "x.csv").write_text("0,1\n")
    assert [p.name for p in discover_records(tmp_path)] == ["7.hea"]
    rec, ann = load_record(tmp_path / "7.hea")
    assert rec.n_samples == 10 and ann.samples.tolist() == [2]
    with pytest.raises(FileNotFoundError):
        discover_records(tmp_path / "missing")


# -- synthetic generator -----------------------------------------------------------


def test_synth_regular_rhythm():
    _, ann = synthesize_ecg(SynthConfig(duration_s=10.0, heart_rate_bpm=60.0))
    assert len(ann) == 10
    assert np.all(np.diff(ann.samples) == 360)


def test_synth_inversion_is_negation():
    base = dict(duration_s=5.0, baseline_wander=(0.2, 0.3), rng_seed=9)
    up, _ = synthesize_ecg(SynthConfig(**base))
    down, _ = synthesize_ecg(SynthConfig(**base, invert_polarity=True))
    assert np.array_equal(down.channel_mv(0), -up.channel_mv(0))


def test_synth_deterministic():
    cfg = SynthConfig(duration_s=8.0, rr_jitter_fraction=0.1, white_noise_std=0.05, powerline=(0.05, 60.0), rng_seed=4)
    a, ann_a = synthesize_ecg(cfg)
    b, ann_b = synthesize_ecg(cfg)
    assert a.channel_mv(0).tobytes() == b.channel_mv(0).tobytes()
    assert np.array_equal(ann_a.samples, ann_b.samples)


def test_synth_config_json_round_trip():
    cfg = SynthConfig(duration_s=3.0, baseline_wander=(0.1, 0.2), invert_polarity=True)
    assert SynthConfig.from_json(cfg.to_json()) == cfg


@pytest.mark.parametrize("bad", [dict(duration_s=0), dict(heart_rate_bpm=10), dict(white_noise_std=-1)])
def test_synth_config_validation(bad):
    with pytest.raises(ValueError):
        SynthConfig(**bad).validate()


@settings(max_examples=30, deadline=None)
@given(bpm=st.floats(40, 180), jitter=st.floats(0, 0.2), seed=st.integers(0, 2**16))
def test_synth_annotation_is_local_argmax(bpm, jitter, seed):
    cfg = SynthConfig(duration_s=6.0, heart_rate_bpm=bpm, rr_jitter_fraction=jitter, rng_seed=seed)
    parts = synthesize_components(cfg)
    half = int(0.025 * cfg.fs)
    for c in parts.r_peaks:
        lo, hi = max(0, c - half), min(parts.clean.size, c + half + 1)
        assert lo + int(np.argmax(parts.clean[lo:hi])) == c


# -- optional MITDB checks ----------------------------------------------------------


@pytest.mark.skipif(not MITDB, reason="QRS_MITDB_DIR not set")
def test_mitdb_record_100():
    rec, ann = read_record(Path(MITDB) / "100")
    ref = wfdb.rdrecord(str(Path(MITDB) / "100"), physical=False)
    assert rec.samples[0, 0] == ref.d_signal[0, 0]
    assert np.array_equal(rec.samples, ref.d_signal.T)
    assert len(ann) == 2273


@pytest.mark.skipif(not MITDB, reason="QRS_MITDB_DIR not set")
def test_mitdb_annotations_in_range():
    for hea in sorted(Path(MITDB).glob("*.hea")):
        rec, ann = read_record(hea)
        assert np.all(np.diff(ann.samples) > 0)
        assert ann.samples[-1] < rec.n_samples
