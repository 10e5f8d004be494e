"""Shared fixtures: tiny WFDB writers built on the package's own encoders."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from dualqrs.ingest import AnnotationSet, encode_annotations, encode_format212


def write_wfdb(directory: Path, record_id: str, adu: np.ndarray, fs: float, beats, gain: float = 200.0,
               adc_zero: int = 1024) -> Path:
    """Write a two-channel format-212 record plus an ``.atr`` beat file."""
    adu = np.asarray(adu, dtype=np.int64)
    frames = adu.T  # (n_samples, 2)
    (directory / f"{record_id}.dat").write_bytes(encode_format212(frames))
    lines = [f"{record_id} 2 {fs:g} {frames.shape[0]}"]
    for name in ("MLII", "V5"):
        lines.append(f"{record_id}.dat 212 {gain:g} 11 {adc_zero} {int(frames[0, 0])} 0 0 {name}")
    (directory / f"{record_id}.hea").write_text("\n".join(lines) + "\n")
    (directory / f"{record_id}.atr").write_bytes(encode_annotations([(int(b), 1) for b in beats]))
    return directory / f"{record_id}.hea"


def mv_to_adu(mv: np.ndarray, gain: float = 200.0, adc_zero: int = 1024) -> np.ndarray:
    return np.clip(np.round(mv * gain) + adc_zero, -2048, 2047).astype(np.int64)


def record_to_wfdb(directory: Path, record_id: str, mv: np.ndarray, ann: AnnotationSet, fs: float = 360.0) -> Path:
    ch = mv_to_adu(mv)
    return write_wfdb(directory, record_id, np.stack([ch, ch[::-1]]), fs, ann.samples)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def report_criterion(name: str, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
