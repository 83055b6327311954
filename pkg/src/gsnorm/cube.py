"""Time-series cubes, label rasters and their binary file formats.

GSNC layout (little-endian)::

    "GSNC" | u16 version=1 | u16 bands | u32 rows | u32 cols | u32 timesteps
    | u16 year | timesteps x u16 DOY | bands x (u16 len + UTF-8 name)
    | float32 payload [band][time][row][col]

GSNL layout::

    "GSNL" | u16 version=1 | u32 rows | u32 cols | u16 year | rows*cols u8
"""

from __future__ import annotations

import io
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np

from gsnorm import MASKED
from gsnorm._binio import FormatError, Reader, TruncatedError, Writer

__all__ = [
    "FormatError",
    "TruncatedError",
    "TimeSeriesCube",
    "LabelRaster",
    "QaMask",
    "write_cube",
    "read_cube",
    "write_labels",
    "read_labels",
    "save_cube",
    "load_cube",
    "save_labels",
    "load_labels",
    "atomic_write",
]

CUBE_MAGIC = b"GSNC"
LABEL_MAGIC = b"GSNL"
VALID_LABELS = (0, 1, 2, MASKED)


@dataclass(eq=False)
class TimeSeriesCube:
    """Multi-band stack indexed ``data[band, time, row, col]`` (float32, NaN = missing)."""

    bands: list[str]
    doys: np.ndarray
    year: int
    data: np.ndarray

    def __post_init__(self):
        self.bands = [str(b) for b in self.bands]
        self.doys = np.asarray(self.doys, dtype=np.int64)
        self.data = np.asarray(self.data, dtype=np.float32)
        nan = np.isnan(self.data)
        if nan.any():
            # canonical quiet NaN 0x7FC00000; arithmetic NaNs may carry a sign bit
            self.data = self.data.copy()
            self.data[nan] = np.float32("nan")
        self.validate()

    def validate(self) -> None:
        if self.data.ndim != 4:
            raise ValueError(f"cube data must be 4-D [band, time, row, col], got shape {self.data.shape}")
        if len(set(self.bands)) != len(self.bands):
            raise ValueError(f"duplicate band names: {self.bands}")
        if self.data.shape[0] != len(self.bands):
            raise ValueError(f"{len(self.bands)} band names for {self.data.shape[0]} data bands")
        if self.doys.ndim != 1 or len(self.doys) != self.data.shape[1]:
            raise ValueError(f"{len(self.doys)} DOYs for {self.data.shape[1]} timesteps")
        if len(self.doys) and (self.doys.min() < 1 or self.doys.max() > 366):
            raise ValueError("DOYs must lie in 1..366")
        if np.any(np.diff(self.doys) <= 0):
            raise ValueError(f"DOYs must be strictly increasing: {self.doys.tolist()}")

    @property
    def rows(self) -> int:
        return self.data.shape[2]

    @property
    def cols(self) -> int:
        return self.data.shape[3]

    @property
    def timesteps(self) -> int:
        return self.data.shape[1]

    def band(self, name: str) -> np.ndarray:
        """Return the ``[time, row, col]`` plane stack for ``name``."""
        try:
            return self.data[self.bands.index(name)]
        except ValueError:
            raise KeyError(f"cube has no band {name!r} (bands: {', '.join(self.bands)})") from None

    def with_data(self, data: np.ndarray, bands: list[str] | None = None) -> "TimeSeriesCube":
        return TimeSeriesCube(list(bands if bands is not None else self.bands), self.doys.copy(), self.year, data)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TimeSeriesCube):
            return NotImplemented
        return (
            self.bands == other.bands
            and self.year == other.year
            and np.array_equal(self.doys, other.doys)
            and self.data.shape == other.data.shape
            and np.array_equal(self.data.view(np.uint32), other.data.view(np.uint32))
        )


@dataclass(eq=False)
class LabelRaster:
    """Per-pixel classes: 0 other, 1 corn, 2 soybean, 255 masked."""

    classes: np.ndarray
    year: int = 0

    def __post_init__(self):
        self.classes = np.asarray(self.classes)
        if self.classes.ndim != 2:
            raise ValueError(f"label raster must be 2-D, got shape {self.classes.shape}")
        _check_label_values(self.classes)
        self.classes = self.classes.astype(np.uint8)

    @property
    def rows(self) -> int:
        return self.classes.shape[0]

    @property
    def cols(self) -> int:
        return self.classes.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelRaster):
            return NotImplemented
        return self.year == other.year and np.array_equal(self.classes, other.classes)


@dataclass
class QaMask:
    """``flags[time, row, col]`` is True where the observation is invalid (cloud, shadow)."""

    flags: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0), dtype=bool))

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=bool)
        if self.flags.ndim != 3:
            raise ValueError(f"QA mask must be 3-D [time, row, col], got shape {self.flags.shape}")


def _check_label_values(classes: np.ndarray) -> None:
    bad = ~np.isin(classes, VALID_LABELS)
    if bad.any():
        values = sorted(set(np.asarray(classes)[bad].tolist()))
        raise ValueError(f"label values outside {{0,1,2,255}}: {values[:10]}")


def write_cube(cube: TimeSeriesCube, sink: BinaryIO) -> int:
    """Serialize ``cube`` to ``sink`` in GSNC format; returns bytes written."""
    cube.validate()
    w = Writer(sink)
    w.raw(CUBE_MAGIC)
    nb, nt, nr, nc = cube.data.shape
    w.pack("HHIIIH", 1, nb, nr, nc, nt, cube.year)
    w.array(cube.doys, "u2")
    for name in cube.bands:
        w.string(name)
    w.array(cube.data, "f4")
    return w.count


def read_cube(source: BinaryIO) -> TimeSeriesCube:
    r = Reader(source)
    r.header(CUBE_MAGIC)
    nb, nr, nc, nt, year = r.unpack("HIIIH", "cube header")
    doys = r.array(nt, "u2", "DOY table")
    if np.any(np.diff(doys.astype(np.int64)) <= 0):
        raise FormatError(f"DOYs not strictly increasing: {doys.tolist()}")
    bands = [r.string("band name") for _ in range(nb)]
    data = r.array(nb * nt * nr * nc, "f4", "cube payload").reshape(nb, nt, nr, nc)
    r.expect_eof("cube payload")
    return TimeSeriesCube(bands, doys, year, data)


def write_labels(labels: LabelRaster, sink: BinaryIO) -> int:
    _check_label_values(labels.classes)
    w = Writer(sink)
    w.raw(LABEL_MAGIC)
    w.pack("HIIH", 1, labels.rows, labels.cols, labels.year)
    w.array(labels.classes, "u1")
    return w.count


def read_labels(source: BinaryIO) -> LabelRaster:
    r = Reader(source)
    r.header(LABEL_MAGIC)
    rows, cols, year = r.unpack("IIH", "label header")
    classes = r.array(rows * cols, "u1", "label payload").reshape(rows, cols)
    r.expect_eof("label payload")
    try:
        _check_label_values(classes)
    except ValueError as e:
        raise FormatError(str(e)) from None
    return LabelRaster(classes, year)


def atomic_write(path: str | os.PathLike, writer, *args) -> int:
    """Run ``writer(obj..., fh)`` against a temp file and rename it over ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            n = writer(*args, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return n


def _load(path, reader):
    with open(path, "rb") as fh:
        return reader(io.BufferedReader(fh))


def save_cube(cube: TimeSeriesCube, path) -> int:
    return atomic_write(path, write_cube, cube)


def load_cube(path) -> TimeSeriesCube:
    return _load(path, read_cube)


def save_labels(labels: LabelRaster, path) -> int:
    return atomic_write(path, write_labels, labels)


def load_labels(path) -> LabelRaster:
    return _load(path, read_labels)
