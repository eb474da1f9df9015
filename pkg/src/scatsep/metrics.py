"""SDR / SIR / SAR from instantaneous orthogonal projections, and report tables.

The decomposition uses time-invariant gains only (no distortion filters),
so values are not directly comparable with filtered BSS-EVAL toolkits.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import AudioClip

CLAMP_DB = 100.0
METRICS = ("SDR", "SIR", "SAR")


@dataclass(frozen=True)
class Decomposition:
    s_target: np.ndarray
    e_interf: np.ndarray
    e_artif: np.ndarray


def _samples(x) -> np.ndarray:
    return x.samples if isinstance(x, AudioClip) else np.asarray(x, dtype=np.float64)


def _ratio_db(num: float, den: float) -> float:
    if den <= 0:
        return CLAMP_DB if num > 0 else -CLAMP_DB
    if num <= 0:
        return -CLAMP_DB
    return float(np.clip(10.0 * np.log10(num / den), -CLAMP_DB, CLAMP_DB))


def decompose(estimate, references: Sequence, target: int) -> Decomposition:
    """Split ``estimate`` into target, interference and artifact components."""
    est = _samples(estimate)
    refs = np.stack([_samples(r) for r in references])
    if isinstance(estimate, AudioClip):
        rates = {r.sample_rate for r in references if isinstance(r, AudioClip)}
        if rates and rates != {estimate.sample_rate}:
            raise ValueError("estimate and references have different sample rates")
    if refs.shape[1] != est.shape[0]:
        raise ValueError(f"length mismatch: estimate {est.shape[0]}, references {refs.shape[1]}")
    s = refs[target]
    energy = float(s @ s)
    if energy == 0.0:
        raise ValueError("target reference has zero energy")
    s_target = (est @ s) / energy * s
    # projection onto span of all references (least squares, rank-safe)
    coef, *_ = np.linalg.lstsq(refs.T, est, rcond=None)
    p_all = refs.T @ coef
    return Decomposition(s_target, p_all - s_target, est - p_all)


def bss_eval(estimate, references: Sequence, target: int):
    """``(SDR, SIR, SAR)`` in dB, each clamped to +-100."""
    d = decompose(estimate, references, target)
    st = float(d.s_target @ d.s_target)
    ei = float(d.e_interf @ d.e_interf)
    ea = float(d.e_artif @ d.e_artif)
    noise = d.e_interf + d.e_artif
    sdr = _ratio_db(st, float(noise @ noise))
    sir = _ratio_db(st, ei)
    sig = d.s_target + d.e_interf
    sar = _ratio_db(float(sig @ sig), ea)
    return sdr, sir, sar


@dataclass
class MetricsRow:
    """Per-source metrics for one mixture; ``values[i]`` is ``(SDR, SIR, SAR)``."""

    name: str
    values: np.ndarray = field(default_factory=lambda: np.zeros((2, 3)))

    @property
    def average(self) -> np.ndarray:
        return self.values.mean(axis=0)


def evaluate_separation(x1, x2, truth: Sequence, name: str = "") -> MetricsRow:
    refs = list(truth)
    vals = np.array([bss_eval(x1, refs, 0), bss_eval(x2, refs, 1)])
    return MetricsRow(name, vals)


def _format(mean: float, std: float) -> str:
    return f"{mean:.1f} [{std:.1f}]"


@dataclass
class MetricsReport:
    """Aggregated per-method metrics: ``summary[method] = (means, stds)``."""

    summary: dict
    rows: dict

    def cell(self, method: str, metric: str) -> str:
        means, stds = self.summary[method]
        k = METRICS.index(metric)
        return _format(means[k], stds[k])

    def table(self) -> str:
        names = list(self.summary)
        width = max([len("Method")] + [len(n) for n in names])
        cells = {n: [self.cell(n, m) for m in METRICS] for n in names}
        colw = max([14] + [len(c) for row in cells.values() for c in row])
        lines = ["Method".ljust(width) + "".join(m.rjust(colw + 2) for m in METRICS)]
        for n in names:
            lines.append(n.ljust(width) + "".join(c.rjust(colw + 2) for c in cells[n]))
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "mixture",
                        "SDR1", "SIR1", "SAR1", "SDR2", "SIR2", "SAR2", "SDR", "SIR", "SAR"])
            for method, rows in self.rows.items():
                for r in rows:
                    w.writerow([method, r.name]
                               + [f"{v:.4f}" for v in r.values.ravel()]
                               + [f"{v:.4f}" for v in r.average])
            for method, (means, stds) in self.summary.items():
                w.writerow([method, "mean"] + [""] * 6 + [f"{v:.4f}" for v in means])
                w.writerow([method, "std"] + [""] * 6 + [f"{v:.4f}" for v in stds])


def aggregate(rows, method: str = "method") -> MetricsReport:
    """Mean and sample standard deviation of the source-averaged metrics.

    ``rows`` is either a list of ``MetricsRow`` (one method) or a mapping
    ``method -> list of MetricsRow``.
    """
    groups = rows if isinstance(rows, dict) else {method: list(rows)}
    summary = {}
    for name, group in groups.items():
        if not group:
            raise ValueError(f"no rows to aggregate for {name!r}")
        avg = np.array([r.average if isinstance(r, MetricsRow) else np.asarray(r, float)
                        for r in group])
        stds = avg.std(axis=0, ddof=1) if len(avg) > 1 else np.zeros(avg.shape[1])
        summary[name] = (avg.mean(axis=0), stds)
    if not summary:
        raise ValueError("no rows to aggregate")
    return MetricsReport(summary, {k: list(v) for k, v in groups.items()})
