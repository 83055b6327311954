"""Greenup, peak and senescence detection from NDVI series.

Stage rules, with ``slope[i] = (ndvi[i+1] - ndvi[i]) / (doy[i+1] - doy[i])``:

* greenup: argmax of slope over ``i < T // 2``
* senescence: argmin of slope over ``greenup < i <= T - 2``
* peak: argmax of ndvi over ``[greenup, senescence]``

Each stage DOY is the left endpoint of its segment; ties go to the earliest index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from gsnorm._binio import Reader, Writer
from gsnorm.cube import TimeSeriesCube, atomic_write

MIN_TIMESTEPS = 4
DEFAULT_MIN_AMPLITUDE = 0.05
PHENOLOGY_MAGIC = b"GSNP"


class InvalidPixelError(ValueError):
    """A series admits no stage assignment satisfying the ordering rules."""


@dataclass(eq=False)
class PhenologyMap:
    """Per-pixel stage indices ``idx[3, rows, cols]`` (greenup, peak, senescence) and validity."""

    idx: np.ndarray
    doy: np.ndarray
    delta: np.ndarray
    valid: np.ndarray

    @property
    def rows(self) -> int:
        return self.valid.shape[0]

    @property
    def cols(self) -> int:
        return self.valid.shape[1]

    greenup_idx = property(lambda self: self.idx[0])
    peak_idx = property(lambda self: self.idx[1])
    senescence_idx = property(lambda self: self.idx[2])
    greenup_doy = property(lambda self: self.doy[0])
    peak_doy = property(lambda self: self.doy[1])
    senescence_doy = property(lambda self: self.doy[2])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PhenologyMap):
            return NotImplemented
        return all(
            np.array_equal(a, b)
            for a, b in [(self.idx, other.idx), (self.doy, other.doy), (self.delta, other.delta), (self.valid, other.valid)]
        )


def _slopes(ndvi: np.ndarray, doys: np.ndarray) -> np.ndarray:
    return np.diff(ndvi, axis=-1) / np.diff(doys.astype(np.float64))


def detect_stages(ndvi, doys) -> tuple[int, int, int]:
    """Return ``(greenup_idx, peak_idx, senescence_idx)`` for one finite series."""
    y = np.asarray(ndvi, dtype=np.float64)
    d = np.asarray(doys)
    T = len(y)
    if T < MIN_TIMESTEPS:
        raise ValueError(f"need at least {MIN_TIMESTEPS} timesteps, got {T}")
    if len(d) != T:
        raise ValueError("ndvi and doys differ in length")
    if not np.isfinite(y).all():
        raise InvalidPixelError("NDVI series contains NaN")
    slope = _slopes(y, d)
    g = int(np.argmax(slope[: T // 2]))
    if g + 1 > T - 2:
        raise InvalidPixelError("no slope segment follows greenup")
    s = g + 1 + int(np.argmin(slope[g + 1 :]))
    p = g + int(np.argmax(y[g : s + 1]))
    return g, p, s


def growing_days(greenup_doy: int, senescence_doy: int) -> int:
    diff = int(senescence_doy) - int(greenup_doy)
    if diff <= 0:
        raise ValueError(f"senescence DOY {senescence_doy} not after greenup DOY {greenup_doy}")
    return diff


def detect_cube(
    cube: TimeSeriesCube,
    min_amplitude: float = DEFAULT_MIN_AMPLITUDE,
    unusable: np.ndarray | None = None,
) -> PhenologyMap:
    """Vectorized :func:`detect_stages` over every pixel of the cube's NDVI band.

    Pixels with NaNs, flagged ``unusable``, or NDVI amplitude below
    ``min_amplitude`` get ``valid=False`` but still carry best-effort stages
    and delta.
    """
    ndvi = cube.band("NDVI")
    T, R, C = ndvi.shape
    if T < MIN_TIMESTEPS:
        raise ValueError(f"need at least {MIN_TIMESTEPS} timesteps, got {T}")
    y = ndvi.reshape(T, -1).T.astype(np.float64)
    finite = np.isfinite(y).all(axis=1)
    y = np.where(np.isfinite(y), y, 0.0)
    slope = _slopes(y, cube.doys)

    g = np.argmax(slope[:, : T // 2], axis=1)
    after = np.arange(T - 1)[None, :] > g[:, None]
    s = np.argmin(np.where(after, slope, np.inf), axis=1)
    within = (np.arange(T)[None, :] >= g[:, None]) & (np.arange(T)[None, :] <= s[:, None])
    p = np.argmax(np.where(within, y, -np.inf), axis=1)

    amplitude = y.max(axis=1) - y.min(axis=1)
    valid = finite & (amplitude >= min_amplitude) & (g + 1 <= T - 2)
    if unusable is not None:
        valid &= ~np.asarray(unusable, dtype=bool).reshape(-1)
    idx = np.stack([g, p, s]).astype(np.int64)
    doy = cube.doys[idx]
    delta = doy[2] - doy[0]
    return PhenologyMap(
        idx=idx.reshape(3, R, C),
        doy=doy.reshape(3, R, C),
        delta=delta.reshape(R, C),
        valid=valid.reshape(R, C),
    )


def write_phenology(pheno: PhenologyMap, sink: BinaryIO) -> int:
    w = Writer(sink)
    w.raw(PHENOLOGY_MAGIC)
    w.pack("HII", 1, pheno.rows, pheno.cols)
    rec = np.zeros(
        pheno.rows * pheno.cols,
        dtype=[("idx", "<u2", 3), ("doy", "<u2", 3), ("delta", "<u2"), ("valid", "u1")],
    )
    rec["idx"] = pheno.idx.reshape(3, -1).T
    rec["doy"] = pheno.doy.reshape(3, -1).T
    rec["delta"] = np.clip(pheno.delta.reshape(-1), 0, None)
    rec["valid"] = pheno.valid.reshape(-1)
    w.raw(rec.tobytes())
    return w.count


def read_phenology(source: BinaryIO) -> PhenologyMap:
    r = Reader(source)
    r.header(PHENOLOGY_MAGIC)
    rows, cols = r.unpack("II", "phenology header")
    dt = np.dtype([("idx", "<u2", 3), ("doy", "<u2", 3), ("delta", "<u2"), ("valid", "u1")])
    rec = np.frombuffer(r.raw(rows * cols * dt.itemsize, "phenology payload"), dtype=dt)
    r.expect_eof("phenology payload")
    return PhenologyMap(
        idx=rec["idx"].T.astype(np.int64).reshape(3, rows, cols),
        doy=rec["doy"].T.astype(np.int64).reshape(3, rows, cols),
        delta=rec["delta"].astype(np.int64).reshape(rows, cols),
        valid=rec["valid"].astype(bool).reshape(rows, cols),
    )


def save_phenology(pheno: PhenologyMap, path) -> int:
    return atomic_write(path, write_phenology, pheno)


def load_phenology(path) -> PhenologyMap:
    with open(path, "rb") as fh:
        return read_phenology(fh)
