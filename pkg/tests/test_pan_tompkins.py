import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualqrs import pan_tompkins as pt
from dualqrs.evaluation import match
from dualqrs.ingest import SynthConfig, synthesize_components
from dualqrs.pan_tompkins import PtConfig, PtRecord, length_label, pt_detect, pt_segment_protocol, pt_stages

FS = 360.0


def clean_ecg(bpm=60.0, seconds=30.0, seed=0, **kw):
    parts = synthesize_components(SynthConfig(duration_s=seconds, heart_rate_bpm=bpm, rng_seed=seed, **kw))
    return parts.clean, parts.r_peaks


# -- filters -----------------------------------------------------------------------------


@pytest.mark.parametrize("fir,rec", [(pt.lowpass, pt.lowpass_recursive), (pt.highpass, pt.highpass_recursive)])
def test_fir_equals_recursion_on_impulse(fir, rec):
    x = np.zeros(80)
    x[0] = 1.0
    np.testing.assert_allclose(fir(x), rec(x), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fir_equals_recursion_random(seed):
    x = np.random.default_rng(seed).normal(size=300)
    np.testing.assert_allclose(pt.lowpass(x), pt.lowpass_recursive(x), atol=1e-9)
    np.testing.assert_allclose(pt.highpass(x), pt.highpass_recursive(x), atol=1e-9)


def test_filter_taps():
    assert pt.LP_TAPS.tolist() == [1, 2, 3, 4, 5, 6, 5, 4, 3, 2, 1]
    assert pt.LP_TAPS.sum() == pt.LP_GAIN
    # high-pass rejects DC once its 32-sample memory is full
    assert abs(pt.highpass(np.ones(100))[40:]).max() < 1e-12


def test_stage_shapes_and_zero_signal():
    s = pt_stages(np.zeros(int(5 * FS)), FS)
    assert s.integrated.size == s.resampled.size == 1000
    assert not np.any(s.integrated)
    assert len(pt_detect(np.zeros(int(5 * FS)), FS).peaks) == 0


def test_mwi_window():
    assert pt.mwi_samples(150.0) == 30


def test_too_short_rejected():
    with pytest.raises(ValueError, match="learning"):
        pt_detect(np.zeros(100), FS)
    with pytest.raises(ValueError):
        PtConfig(twave_window_ms=100.0).validate()


def test_one_integrated_hump_per_beat():
    x, r = clean_ecg(seconds=10.0)
    integ = pt_stages(x, FS).integrated
    maxima = pt._local_maxima(integ)
    big = maxima[integ[maxima] > 0.1 * integ.max()]
    # ripple maxima on one hump lie within the 200 ms refractory span
    clusters = 1 + np.sum(np.diff(big) >= 40)
    assert clusters == r.size
    assert np.all(np.diff(big)[np.diff(big) < 40] < 25)


def test_local_maxima_plateau_counted_once():
    y = np.array([0, 1, 2, 2, 2, 1, 0, 3, 0], dtype=float)
    assert pt._local_maxima(y).tolist() == [2, 7]


# -- detection --------------------------------------------------------------------------------


def test_sinus_60bpm_perfect():
    x, r = clean_ecg()
    res = pt_detect(x, FS)
    c = match(res.peaks.indices, r, FS)
    assert (c.fp, c.fn) == (0, 0)
    assert c.tp == 30


def test_weak_beat_recovered():
    x, r = clean_ecg()
    k = 15
    lo, hi = r[k] - 180, r[k] + 180
    x = x.copy()
    x[lo:hi] *= 0.3
    det = pt_detect(x, FS).peaks.indices
    assert np.min(np.abs(det - r[k])) <= 13
    assert match(det, r, FS).fn == 0


def test_inverted_polarity_detected():
    x, r = clean_ecg(bpm=75.0)
    c = match(pt_detect(-x, FS).peaks.indices, r, FS)
    assert c.fn == 0 and c.fp == 0


def test_refractory_gap_in_output():
    x, _ = clean_ecg(bpm=150.0, seconds=20.0, white_noise_std=0.05)
    det = pt_detect(x, FS).peaks.indices
    assert np.all(np.diff(det) >= 72)


def test_trace_thresholds_and_rr_buffers():
    x, _ = clean_ecg(seconds=30.0, rr_jitter_fraction=0.05)
    res = pt_detect(x, FS, trace=True)
    assert res.trace[0]["event"] == "init"
    assert {e["event"] for e in res.trace} >= {"init", "signal"}
    for e in res.trace:
        assert e["thr_i1"] == pytest.approx(e["npki"] + 0.25 * (e["spki"] - e["npki"]))
        assert e["thr_i2"] == pytest.approx(0.5 * e["thr_i1"])
        assert e["thr_f1"] == pytest.approx(e["npkf"] + 0.25 * (e["spkf"] - e["npkf"]))
        assert len(e["rr_buffer_recent"]) <= 8 and len(e["rr_buffer_limited"]) <= 8
        if e["rr_avg1"] is not None:
            assert e["rr_avg1"] == pytest.approx(np.mean(e["rr_buffer_recent"]))
            assert e["rr_avg2"] == pytest.approx(np.mean(e["rr_buffer_limited"]))
            assert e["rr_missed"] == pytest.approx(1.66 * e["rr_avg2"])
    assert len(res.trace[-1]["rr_buffer_recent"]) == 8


def test_state_rr_limits():
    s = pt.PtState()
    s.add_rr(200.0)
    assert (s.rr_low, s.rr_high) == pytest.approx((184.0, 232.0))
    s.add_rr(300.0)  # outside the 92-116 % band: only the recent buffer takes it
    assert list(s.rr_buffer_limited) == [200.0]
    assert s.rr_avg1 == 250.0


def test_other_sampling_rate():
    parts = synthesize_components(SynthConfig(duration_s=20.0, heart_rate_bpm=70, fs=500.0))
    c = match(pt_detect(parts.clean, 500.0).peaks.indices, parts.r_peaks, 500.0)
    assert c.fn == 0 and c.fp == 0


def test_deterministic():
    x, _ = clean_ecg(seconds=20.0, white_noise_std=0.1)
    a, b = pt_detect(x, FS), pt_detect(x, FS)
    assert a.peaks == b.peaks


# -- window protocol -----------------------------------------------------------------------------


def test_labels():
    assert [length_label(s) for s in pt.DEFAULT_LENGTHS_S] == ["5 s", "10 s", "20 s", "30 s", "5 min"]


def test_protocol_empty():
    assert pt_segment_protocol([]) == {}


def test_protocol_single_window_equals_direct_call():
    x, r = clean_ecg(seconds=30.0, white_noise_std=0.05)
    out = pt_segment_protocol([PtRecord("a", x, FS, r)], [30.0])
    direct = match(pt_detect(x, FS).peaks.indices, r, FS)
    assert out["30 s"].rows[0].counts == direct


def test_protocol_remainder_counts_as_misses():
    x, r = clean_ecg(seconds=31.0)
    out = pt_segment_protocol([PtRecord("a", x, FS, r)], [30.0])
    # the trailing 1 s window is shorter than the learning phase
    assert out["30 s"].aggregate.counts.fn == np.sum(r >= int(30 * FS))


def test_short_windows_not_better_than_long():
    recs = []
    for i, bpm in enumerate([55, 80]):
        x, r = clean_ecg(bpm=bpm, seconds=300.0, seed=i, white_noise_std=0.08, baseline_wander=(0.2, 0.3))
        recs.append(PtRecord(f"r{i}", x, FS, r))
    out = pt_segment_protocol(recs, [5.0, 300.0])
    assert out["5 s"].aggregate.metrics.se <= out["5 min"].aggregate.metrics.se
