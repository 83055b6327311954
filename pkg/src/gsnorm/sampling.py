"""Quadrant train/validation split and class-balanced subsampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gsnorm import CLASS_NAMES, MASKED
from gsnorm.rng import stream

TRAIN, VALIDATION, TEST, EXCLUDED = 0, 1, 2, 3
SPLIT_CODES = {"train": TRAIN, "val": VALIDATION, "validation": VALIDATION, "test": TEST}


class InsufficientSamplesError(ValueError):
    def __init__(self, shortfall: dict[int, tuple[int, int]]):
        parts = [f"{CLASS_NAMES[c] if c < len(CLASS_NAMES) else c}: have {have}, need {need}" for c, (have, need) in shortfall.items()]
        super().__init__("insufficient candidates per class (" + "; ".join(parts) + ")")
        self.shortfall = shortfall


@dataclass
class SplitAssignment:
    split: np.ndarray  # (rows, cols) uint8 of TRAIN/VALIDATION/TEST/EXCLUDED
    row_mid: int
    col_mid: int

    def pixels(self, which: int) -> np.ndarray:
        return np.argwhere(self.split == which)

    def excluding(self, labels: np.ndarray) -> "SplitAssignment":
        """Mark masked label pixels as excluded."""
        out = self.split.copy()
        out[np.asarray(labels) == MASKED] = EXCLUDED
        return SplitAssignment(out, self.row_mid, self.col_mid)


def quadrant_split(rows: int, cols: int) -> SplitAssignment:
    """NW, NE and SE quadrants train; SW validates. Midpoints are floor(n / 2)."""
    if rows < 2 or cols < 2:
        raise ValueError(f"raster {rows}x{cols} too small to split into quadrants")
    rm, cm = rows // 2, cols // 2
    split = np.full((rows, cols), TRAIN, dtype=np.uint8)
    split[rm:, :cm] = VALIDATION
    return SplitAssignment(split, rm, cm)


def presample(candidates: list, count: int, seed: int) -> list:
    """Uniform random subset of ``count`` candidates (all of them when count <= 0 or too few)."""
    if count <= 0 or count >= len(candidates):
        return list(candidates)
    pick = np.sort(stream(seed, "presample").choice(len(candidates), size=count, replace=False))
    return [candidates[i] for i in pick]


def balanced_subsample(candidates: list, per_class: int, seed: int, n_classes: int = 3) -> list:
    """Draw ``per_class`` candidates per class without replacement.

    ``candidates`` is a list of ``(pixel, label)``; ``per_class=0`` means the
    size of the smallest class. Output is grouped by class in ascending label
    order, each group in random order.
    """
    labels = np.array([lab for _, lab in candidates], dtype=np.int64)
    counts = np.bincount(labels, minlength=n_classes) if len(labels) else np.zeros(n_classes, int)
    need = int(counts.min()) if per_class == 0 else int(per_class)
    if per_class < 0:
        raise ValueError("per_class must be >= 0")
    short = {c: (int(counts[c]), need) for c in range(n_classes) if counts[c] < need}
    if short:
        raise InsufficientSamplesError(short)
    if need == 0:
        raise InsufficientSamplesError({c: (int(counts[c]), 1) for c in range(n_classes) if counts[c] == 0})
    rng = stream(seed, "balance")
    out = []
    for c in range(n_classes):
        members = np.flatnonzero(labels == c)
        for i in rng.permutation(members)[:need]:
            out.append(candidates[i])
    return out
