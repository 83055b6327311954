"""Cloud masking, gap filling and Savitzky-Golay smoothing of per-pixel series."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from gsnorm.cube import QaMask, TimeSeriesCube


class UnfillableSeriesError(ValueError):
    """Raised when a series has no finite value to interpolate from."""


@dataclass(frozen=True)
class SmoothingConfig:
    window: int = 7
    polyorder: int = 2

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be an odd integer >= 3, got {self.window}")
        if not 0 <= self.polyorder < self.window:
            raise ValueError(f"polyorder must satisfy 0 <= polyorder < window, got {self.polyorder}")


def apply_qa_mask(cube: TimeSeriesCube, mask: QaMask) -> TimeSeriesCube:
    """Set every band to NaN wherever ``mask`` flags the (time, row, col) cell."""
    if mask.flags.shape != cube.data.shape[1:]:
        raise ValueError(f"QA mask shape {mask.flags.shape} does not match cube {cube.data.shape[1:]}")
    data = cube.data.copy()
    data[:, mask.flags] = np.nan
    return cube.with_data(data)


def fill_gaps(series, doys) -> np.ndarray:
    """Linear interpolation in DOY over NaNs; edges take the nearest finite value."""
    y = np.asarray(series, dtype=np.float64)
    x = np.asarray(doys, dtype=np.float64)
    ok = np.isfinite(y)
    if not ok.any():
        raise UnfillableSeriesError("series has no finite values to fill from")
    if ok.all():
        return y.copy()
    out = y.copy()
    out[~ok] = np.interp(x[~ok], x[ok], y[ok])
    return out


@lru_cache(maxsize=32)
def smoothing_matrix(length: int, window: int, polyorder: int) -> np.ndarray:
    """Linear operator S with ``smoothed = S @ series``.

    Row i is the least-squares polynomial fit over indices
    ``[max(0, i-h), min(length-1, i+h)]`` evaluated at i, so edge rows fit a
    truncated window instead of mirroring data past the series ends.
    """
    h = window // 2
    S = np.zeros((length, length))
    for i in range(length):
        lo, hi = max(0, i - h), min(length - 1, i + h)
        pos = np.arange(lo, hi + 1) - i
        order = min(polyorder, len(pos) - 1)
        V = np.vander(pos.astype(np.float64), order + 1, increasing=True)
        # constant term of the fitted polynomial = its value at offset 0
        S[i, lo : hi + 1] = np.linalg.pinv(V)[0]
    S.setflags(write=False)
    return S


def savgol_smooth(series, config: SmoothingConfig = SmoothingConfig()) -> np.ndarray:
    y = np.asarray(series, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError("savgol_smooth expects a 1-D series")
    if len(y) < config.window:
        raise ValueError(f"series length {len(y)} shorter than window {config.window}")
    if not np.isfinite(y).all():
        raise ValueError("series contains NaN; fill gaps first")
    return smoothing_matrix(len(y), config.window, config.polyorder) @ y


def smooth_cube(cube: TimeSeriesCube, config: SmoothingConfig = SmoothingConfig()):
    """Gap-fill and smooth each (band, row, col) series.

    Returns ``(smoothed_cube, unusable)`` where ``unusable[row, col]`` marks
    pixels with at least one band that was entirely NaN; such series stay NaN.
    """
    nb, nt, nr, nc = cube.data.shape
    if nt < config.window:
        raise ValueError(f"cube has {nt} timesteps, fewer than window {config.window}")
    series = cube.data.reshape(nb, nt, nr * nc).transpose(0, 2, 1).reshape(-1, nt).astype(np.float64)
    finite = np.isfinite(series)
    has_gap = ~finite.all(axis=1)
    empty = ~finite.any(axis=1)
    for k in np.flatnonzero(has_gap & ~empty):
        series[k] = fill_gaps(series[k], cube.doys)
    S = smoothing_matrix(nt, config.window, config.polyorder)
    smoothed = series @ S.T
    smoothed[empty] = np.nan
    out = smoothed.reshape(nb, nr * nc, nt).transpose(0, 2, 1).reshape(nb, nt, nr, nc)
    unusable = empty.reshape(nb, nr, nc).any(axis=0)
    return cube.with_data(out.astype(np.float32)), unusable
