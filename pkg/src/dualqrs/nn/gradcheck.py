"""Central finite-difference validation of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tensor

# relative error floor: entries whose true gradient is ~0 are compared absolutely
REL_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)  # probes that straddled a kink

    @property
    def max_rel_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def __str__(self) -> str:
        status = "ok" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={v:.2e}" for k, v in self.errors.items())
        return f"[{status}] max rel err {self.max_rel_error:.2e} (tol {self.tolerance:.0e}): {parts}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    tolerance: float = 1e-5,
    h: float = 1e-4,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    guard_kinks: bool = False,
    stencil: int = 3,
) -> GradCheckReport:
    """Compare ``backward`` gradients of scalar ``fn()`` against central differences.

    ``fn`` must rebuild the graph from the current ``inputs`` on every call and
    be deterministic (reseed any dropout rng inside it). With ``max_entries``
    only that many coordinates per input are probed, drawn from ``rng``.
    With ``guard_kinks`` a coordinate whose +-h evaluations change any ReLU
    mask or pool argmax is dropped (and, when subsampling, replaced).
    ``stencil=5`` uses the fourth-order central formula
    ``(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h``.
    """
    if stencil not in (3, 5):
        raise ValueError("stencil must be 3 or 5")
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with ops.record_pattern() as base:
        out = fn()
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    rng = rng or np.random.default_rng(0)

    def evaluate():
        if not guard_kinks:
            return float(fn().data), True
        with ops.record_pattern() as pat:
            value = float(fn().data)
        return value, pat == base

    report = GradCheckReport(tolerance)
    for idx, (t, ga) in enumerate(zip(inputs, analytic)):
        name = t.name or f"input{idx}"
        flat = t.data.reshape(-1)
        numeric = np.zeros(flat.size)
        if max_entries is not None and flat.size > max_entries:
            order, want = rng.permutation(flat.size), max_entries
        else:
            order, want = np.arange(flat.size), flat.size
        probed = np.zeros(flat.size, dtype=bool)
        done = skipped = 0
        for i in order:
            if done == want:
                break
            saved = flat[i]
            steps = (1, -1) if stencil == 3 else (2, 1, -1, -2)
            vals, ok = {}, True
            for k in steps:
                flat[i] = saved + k * h
                vals[k], fine = evaluate()
                ok = ok and fine
            flat[i] = saved
            if not ok:
                skipped += 1
                continue
            if stencil == 3:
                numeric[i] = (vals[1] - vals[-1]) / (2.0 * h)
            else:
                numeric[i] = (-vals[2] + 8.0 * vals[1] - 8.0 * vals[-1] + vals[-2]) / (12.0 * h)
            probed[i] = True
            done += 1
        ga_flat = ga.reshape(-1)
        report.errors[name] = relative_error(ga_flat[probed], numeric[probed])
        if skipped:
            report.skipped[name] = skipped
    for t in inputs:
        t.grad = None
    return report
