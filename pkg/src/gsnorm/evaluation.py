"""Accuracy assessment and per-class NDVI histogram diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gsnorm import CLASS_NAMES, MASKED
from gsnorm.cube import LabelRaster, TimeSeriesCube
from gsnorm.features import nearest_indices

N_CLASSES = len(CLASS_NAMES)


@dataclass
class Metrics:
    """Confusion matrix (rows reference, columns predicted) and derived accuracies.

    ``user_accuracy`` / ``producer_accuracy`` hold ``None`` for classes with no
    predictions / no reference pixels: undefined, not zero.
    """

    confusion: np.ndarray
    overall_accuracy: float
    user_accuracy: list[float | None]
    producer_accuracy: list[float | None]
    support: list[int]

    @classmethod
    def from_confusion(cls, confusion: np.ndarray) -> "Metrics":
        m = np.asarray(confusion, dtype=np.int64)
        total = int(m.sum())
        if total == 0:
            raise ValueError("no unmasked pixels to evaluate")
        diag = np.diag(m)
        col, row = m.sum(axis=0), m.sum(axis=1)
        ua = [float(diag[c] / col[c]) if col[c] else None for c in range(len(m))]
        pa = [float(diag[c] / row[c]) if row[c] else None for c in range(len(m))]
        return cls(m, float(diag.sum() / total), ua, pa, row.tolist())


def confusion_and_metrics(predicted: LabelRaster, reference: LabelRaster) -> Metrics:
    p, r = predicted.classes, reference.classes
    if p.shape != r.shape:
        raise ValueError(f"shape mismatch: predicted {p.shape} vs reference {r.shape}")
    keep = (p != MASKED) & (r != MASKED)
    idx = r[keep].astype(np.int64) * N_CLASSES + p[keep].astype(np.int64)
    confusion = np.bincount(idx, minlength=N_CLASSES * N_CLASSES).reshape(N_CLASSES, N_CLASSES)
    return Metrics.from_confusion(confusion)


def _pct(v: float | None) -> str:
    return "undef" if v is None else f"{100 * v:.1f}"


def format_table(columns: dict[str, Metrics]) -> str:
    """Text table with one column per model: OA, then UA and PA rows per class."""
    names = list(columns)
    width = max(12, *(len(n) + 2 for n in names))
    lines = ["Measure".ljust(20) + "".join(n.rjust(width) for n in names)]
    lines.append("Overall accuracy".ljust(20) + "".join(_pct(columns[n].overall_accuracy).rjust(width) for n in names))
    for title, attr in (("Precision (UA)", "user_accuracy"), ("Recall (PA)", "producer_accuracy")):
        lines.append(title)
        for c, cname in enumerate(CLASS_NAMES):
            lines.append(f"   {cname.capitalize()}".ljust(20) + "".join(_pct(getattr(columns[n], attr)[c]).rjust(width) for n in names))
    return "\n".join(lines) + "\n"


def format_csv(metrics: Metrics) -> str:
    lines = ["class,ua,pa,support"]
    for c, cname in enumerate(CLASS_NAMES):
        ua, pa = metrics.user_accuracy[c], metrics.producer_accuracy[c]
        lines.append(
            f"{cname},{'' if ua is None else f'{ua:.6f}'},{'' if pa is None else f'{pa:.6f}'},{metrics.support[c]}"
        )
    lines.append(f"OA,{metrics.overall_accuracy:.6f},,{int(metrics.confusion.sum())}")
    return "\n".join(lines) + "\n"


@dataclass
class HistogramTable:
    edges: np.ndarray
    counts: np.ndarray  # (classes, bins)
    means: list[float | None]
    doy: int

    def format(self) -> str:
        head = "class," + ",".join(f"[{a:.2f};{b:.2f})" for a, b in zip(self.edges[:-1], self.edges[1:])) + ",mean"
        rows = [f"# NDVI histogram at DOY {self.doy}", head]
        for c, cname in enumerate(CLASS_NAMES):
            mean = "" if self.means[c] is None else f"{self.means[c]:.4f}"
            rows.append(cname + "," + ",".join(str(int(v)) for v in self.counts[c]) + "," + mean)
        return "\n".join(rows) + "\n"


def class_histograms(cube: TimeSeriesCube, labels: LabelRaster, doy: int, bins=None) -> HistogramTable:
    """Per-class NDVI histogram at the timestep nearest ``doy`` over unmasked pixels.

    ``bins`` defaults to 10 equal bins over [0, 1]; values outside the edges are
    clipped into the end bins so every finite pixel is counted.
    """
    edges = np.linspace(0.0, 1.0, 11) if bins is None else np.asarray(bins, dtype=np.float64)
    t = int(nearest_indices([doy], cube.doys)[0])
    ndvi = cube.band("NDVI")[t].astype(np.float64)
    lab = labels.classes
    if lab.shape != ndvi.shape:
        raise ValueError("labels and cube differ in shape")
    counts = np.zeros((N_CLASSES, len(edges) - 1), dtype=np.int64)
    means: list[float | None] = []
    for c in range(N_CLASSES):
        v = ndvi[(lab == c) & np.isfinite(ndvi)]
        if len(v):
            # tiny tolerance keeps values sitting on an interior edge (e.g. 0.5 as 0.49999999) in the upper bin
            b = np.searchsorted(edges, v + 1e-9, side="right") - 1
            counts[c] = np.bincount(np.clip(b, 0, len(edges) - 2), minlength=len(edges) - 1)
            means.append(float(v.mean()))
        else:
            means.append(None)
    return HistogramTable(edges, counts, means, int(cube.doys[t]))
