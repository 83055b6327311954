"""Classifier inputs: label hygiene, timestep selection and patch extraction."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np
from scipy import ndimage

from gsnorm import CHANNELS, CORN, MASKED, OTHER, SOYBEAN
from gsnorm._binio import FormatError, Reader, Writer
from gsnorm.cube import LabelRaster, TimeSeriesCube, atomic_write
from gsnorm.phenology import PhenologyMap

PATCH = 5
SEASON_STAGES = {"early": 1, "mid": 2, "late": 3}
SEASON_CODES = {"early": 1, "mid": 2, "late": 3}
CDL_CORN = 1
CDL_SOYBEAN = 5
DELTA_SCALE = 365.0
SAMPLE_MAGIC = b"GSNS"

# First-, second- and third-date baseline DOYs by year; other years use 2017's.
FIXED_DOYS = {
    2017: (153, 210, 274),
    2018: (149, 209, 271),
    2019: (152, 211, 274),
}


class SampleError(ValueError):
    """A pixel cannot be turned into a classifier sample."""


def stage_count(season: str) -> int:
    try:
        return SEASON_STAGES[season]
    except KeyError:
        raise ValueError(f"unknown season mode {season!r}; expected early, mid or late") from None


def fixed_doys_for(year: int, season: str) -> tuple[int, ...]:
    return FIXED_DOYS.get(year, FIXED_DOYS[2017])[: stage_count(season)]


@dataclass
class DateSelector:
    """Either growth-stage (``phenology`` given) or fixed calendar DOYs."""

    mode: str
    fixed_doys: tuple[int, ...] = ()
    phenology: PhenologyMap | None = None

    def __post_init__(self):
        if self.mode == "gs":
            if self.phenology is None:
                raise ValueError("growth-stage selector needs a phenology map")
        elif self.mode == "fixed":
            self.fixed_doys = tuple(int(d) for d in self.fixed_doys)
            if not self.fixed_doys or list(self.fixed_doys) != sorted(self.fixed_doys):
                raise ValueError(f"fixed DOYs must be non-empty and ascending, got {self.fixed_doys}")
        else:
            raise ValueError(f"selector mode must be 'gs' or 'fixed', got {self.mode!r}")

    @classmethod
    def growth_stage(cls, phenology: PhenologyMap) -> "DateSelector":
        return cls("gs", phenology=phenology)

    @classmethod
    def fixed(cls, doys: Sequence[int]) -> "DateSelector":
        return cls("fixed", fixed_doys=tuple(doys))


@dataclass
class Sample:
    x_lstm: np.ndarray  # (M, D)
    x_cnn: np.ndarray  # (k, k, M*D), channel = d*M + m
    delta: float  # growing days, NaN when absent
    label: int
    pixel: tuple[int, int]
    season: str


@dataclass
class SampleBatch:
    x_lstm: np.ndarray  # (N, M, D) float32
    x_cnn: np.ndarray  # (N, k, k, M*D) float32
    delta: np.ndarray  # (N,) float32, NaN when absent
    labels: np.ndarray  # (N,) uint8
    pixels: np.ndarray  # (N, 2) int64
    season: str = "late"
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def has_delta(self) -> bool:
        return len(self) > 0 and bool(np.isfinite(self.delta).all())

    def subset(self, index) -> "SampleBatch":
        return SampleBatch(
            self.x_lstm[index], self.x_cnn[index], self.delta[index], self.labels[index], self.pixels[index], self.season
        )

    def flat_features(self, include_delta: bool) -> np.ndarray:
        """Forest input: x_lstm flattened time-major (D blocks of M channels), then delta."""
        flat = self.x_lstm.transpose(0, 2, 1).reshape(len(self), -1)
        if include_delta:
            if not self.has_delta:
                raise ValueError("delta requested but samples carry none")
            flat = np.concatenate([flat, self.delta[:, None]], axis=1)
        return flat.astype(np.float32)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SampleBatch):
            return NotImplemented
        same_bits = lambda a, b: a.shape == b.shape and np.array_equal(  # noqa: E731
            np.ascontiguousarray(a, np.float32).view(np.uint32), np.ascontiguousarray(b, np.float32).view(np.uint32)
        )
        return (
            self.season == other.season
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.pixels, other.pixels)
            and same_bits(self.x_lstm, other.x_lstm)
            and same_bits(self.x_cnn, other.x_cnn)
            and same_bits(self.delta, other.delta)
        )

    @staticmethod
    def concat(batches: Sequence["SampleBatch"]) -> "SampleBatch":
        if not batches:
            raise ValueError("no sample batches to concatenate")
        seasons = {b.season for b in batches}
        if len(seasons) != 1:
            raise ValueError(f"cannot mix season modes {sorted(seasons)}")
        return SampleBatch(
            np.concatenate([b.x_lstm for b in batches]),
            np.concatenate([b.x_cnn for b in batches]),
            np.concatenate([b.delta for b in batches]),
            np.concatenate([b.labels for b in batches]),
            np.concatenate([b.pixels for b in batches]),
            batches[0].season,
        )


# --- label hygiene -----------------------------------------------------------


def aggregate_classes(raw_codes, year: int = 0) -> LabelRaster:
    """Map CDL codes to corn (1), soybean (2) and other (0)."""
    raw = np.asarray(raw_codes)
    out = np.full(raw.shape, OTHER, dtype=np.uint8)
    out[raw == CDL_CORN] = CORN
    out[raw == CDL_SOYBEAN] = SOYBEAN
    return LabelRaster(out, year)


def homogeneity_mask(labels: LabelRaster) -> LabelRaster:
    """Keep a label only where its whole 3x3 neighborhood agrees; borders are masked."""
    c = labels.classes
    R, C = c.shape
    if R < 3 or C < 3:
        raise ValueError(f"raster {R}x{C} too small for a 3x3 homogeneity filter")
    centre = c[1:-1, 1:-1]
    same = np.ones(centre.shape, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            same &= c[1 + dr : R - 1 + dr, 1 + dc : C - 1 + dc] == centre
    out = np.full(c.shape, MASKED, dtype=np.uint8)
    out[1:-1, 1:-1] = np.where(same, centre, MASKED)
    return LabelRaster(out, labels.year)


def sieve(labels: LabelRaster, min_size: int = 4) -> LabelRaster:
    """Merge 4-connected components smaller than ``min_size`` into their largest neighbor.

    Components are processed smallest first (ties by id, i.e. raster order of
    first pixel). Masked pixels neither belong to nor connect components.
    Neighbor ties go to the lower component id.
    """
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    c = labels.classes
    comp = np.zeros(c.shape, dtype=np.int64)
    n = 0
    for value in (OTHER, CORN, SOYBEAN):
        lab, k = ndimage.label(c == value)
        comp[lab > 0] = lab[lab > 0] + n
        n += k
    if n == 0 or min_size == 1:
        return LabelRaster(c.copy(), labels.year)
    # relabel ids in raster order of first pixel for deterministic tie-breaking
    ids, first = np.unique(comp.ravel(), return_index=True)
    keep = ids > 0
    ids, first = ids[keep], first[keep]
    remap = np.zeros(n + 1, dtype=np.int64)
    remap[ids[np.argsort(first)]] = np.arange(1, len(ids) + 1)
    comp = remap[comp]

    label_of = np.zeros(n + 1, dtype=np.int64)
    label_of[comp.ravel()] = c.ravel()
    size = np.bincount(comp.ravel(), minlength=n + 1)
    adj: list[set[int]] = [set() for _ in range(n + 1)]
    for a, b in ((comp[:, :-1], comp[:, 1:]), (comp[:-1, :], comp[1:, :])):
        m = (a != b) & (a > 0) & (b > 0)
        for x, y in set(zip(a[m].tolist(), b[m].tolist())):
            adj[x].add(y)
            adj[y].add(x)

    parent = np.arange(n + 1)
    alive = np.ones(n + 1, dtype=bool)
    alive[0] = False

    def absorb(keep: int, gone: int) -> None:
        parent[gone] = keep
        alive[gone] = False
        size[keep] += size[gone]
        for x in adj[gone]:
            if x != keep:
                adj[x].discard(gone)
                adj[x].add(keep)
                adj[keep].add(x)
        adj[keep].discard(gone)
        adj[gone] = set()

    heap = [(int(size[i]), i) for i in range(1, n + 1) if size[i] < min_size]
    heapq.heapify(heap)
    while heap:
        sz, i = heapq.heappop(heap)
        if not alive[i] or sz != size[i] or size[i] >= min_size:
            continue
        if not adj[i]:
            continue
        target = min(adj[i], key=lambda j: (-size[j], j))
        absorb(target, i)
        # same-label neighbors of the grown component are now connected to it
        for x in sorted(adj[target]):
            if label_of[x] == label_of[target]:
                absorb(target, x)
        if size[target] < min_size:
            heapq.heappush(heap, (int(size[target]), target))

    root = parent.copy()
    for _ in range(n):
        nxt = root[root]
        if np.array_equal(nxt, root):
            break
        root = nxt
    out = np.where(comp > 0, label_of[root[comp]], c).astype(np.uint8)
    return LabelRaster(out, labels.year)


# --- timestep selection and sample extraction ---------------------------------


def nearest_indices(requested: Sequence[int], doys: np.ndarray) -> np.ndarray:
    """Index of the nearest available DOY for each request; ties go to the earlier date."""
    doys = np.asarray(doys)
    req = np.asarray(requested)[:, None]
    return np.argmin(np.abs(doys[None, :] - req), axis=1)


def select_timesteps(selector: DateSelector, pixel: tuple[int, int], doys, season: str) -> list[int]:
    D = stage_count(season)
    if selector.mode == "fixed":
        if len(selector.fixed_doys) != D:
            raise ValueError(f"{len(selector.fixed_doys)} fixed DOYs for {season}-season ({D} stages)")
        return nearest_indices(selector.fixed_doys, doys).tolist()
    r, c = pixel
    return [int(i) for i in selector.phenology.idx[:D, r, c]]


def _channel_planes(cube: TimeSeriesCube) -> np.ndarray:
    missing = [b for b in CHANNELS if b not in cube.bands]
    if missing:
        raise KeyError(f"cube lacks classifier channels: {', '.join(missing)}")
    return cube.data[[cube.bands.index(b) for b in CHANNELS]]


def _deltas(selector: DateSelector, rows, cols, season: str) -> np.ndarray:
    if selector.mode == "fixed" or season == "early":
        return np.full(len(rows), np.nan, dtype=np.float32)
    doy = selector.phenology.doy[:, rows, cols]
    end = doy[2] if season == "late" else doy[1]
    return (end - doy[0]).astype(np.float32)


def extract_batch(
    cube: TimeSeriesCube,
    labels: LabelRaster | None,
    selector: DateSelector,
    pixels: np.ndarray,
    season: str,
    k: int = PATCH,
) -> SampleBatch:
    """Vectorized sample extraction for an ``(N, 2)`` array of (row, col) pixels."""
    D = stage_count(season)
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    rows, cols = pixels[:, 0], pixels[:, 1]
    h = k // 2
    if len(pixels):
        if rows.min() < h or cols.min() < h or rows.max() >= cube.rows - h or cols.max() >= cube.cols - h:
            raise SampleError(f"patch of size {k} does not fit around every pixel (need {h}-pixel margin)")
    if labels is not None:
        lab = labels.classes[rows, cols]
        if np.any(lab == MASKED):
            raise SampleError("masked pixel requested")
    else:
        lab = np.full(len(pixels), MASKED, dtype=np.uint8)

    if selector.mode == "fixed":
        if len(selector.fixed_doys) != D:
            raise ValueError(f"{len(selector.fixed_doys)} fixed DOYs for {season}-season ({D} stages)")
        sel = np.broadcast_to(nearest_indices(selector.fixed_doys, cube.doys), (len(pixels), D))
    else:
        if selector.phenology.valid.shape != (cube.rows, cube.cols):
            raise ValueError("phenology map shape does not match cube")
        sel = selector.phenology.idx[:D, rows, cols].T

    chan = _channel_planes(cube)  # (M, T, R, C)
    M = chan.shape[0]
    x_lstm = chan[:, sel, rows[:, None], cols[:, None]].transpose(1, 0, 2)  # (N, M, D)
    off = np.arange(-h, h + 1)
    rr = rows[:, None, None, None] + off[None, :, None, None]
    cc = cols[:, None, None, None] + off[None, None, :, None]
    patch = chan[:, sel[:, None, None, :], rr, cc]  # (M, N, k, k, D)
    x_cnn = patch.transpose(1, 2, 3, 4, 0).reshape(len(pixels), k, k, D * M)
    if not (np.isfinite(x_lstm).all() and np.isfinite(x_cnn).all()):
        raise SampleError("NaN in selected observations")
    return SampleBatch(
        np.ascontiguousarray(x_lstm, dtype=np.float32),
        np.ascontiguousarray(x_cnn, dtype=np.float32),
        _deltas(selector, rows, cols, season),
        lab.astype(np.uint8),
        pixels.copy(),
        season,
    )


def extract_sample(
    cube: TimeSeriesCube,
    labels: LabelRaster,
    selector: DateSelector,
    pixel: tuple[int, int],
    season: str,
) -> Sample:
    b = extract_batch(cube, labels, selector, np.array([pixel]), season)
    return Sample(b.x_lstm[0], b.x_cnn[0], float(b.delta[0]), int(b.labels[0]), tuple(pixel), season)


def sampleable(cube: TimeSeriesCube, k: int = PATCH) -> np.ndarray:
    """Pixels whose whole k x k patch is finite across the classifier channels at every date."""
    h = k // 2
    finite = np.isfinite(_channel_planes(cube)).all(axis=(0, 1))
    ok = ndimage.binary_erosion(finite, structure=np.ones((k, k), bool), border_value=0)
    ok[:h] = ok[-h:] = False
    ok[:, :h] = ok[:, -h:] = False
    return ok


# --- GSNS serialization ---------------------------------------------------------


def write_samples(batch: SampleBatch, sink: BinaryIO) -> int:
    N = len(batch)
    if N:
        _, M, D = batch.x_lstm.shape
        k = batch.x_cnn.shape[1]
    else:
        M, D, k = len(CHANNELS), stage_count(batch.season), PATCH
    w = Writer(sink)
    w.raw(SAMPLE_MAGIC)
    w.pack("HIBBBB", 1, N, SEASON_CODES[batch.season], M, D, k)
    rec = np.zeros(
        N,
        dtype=[
            ("label", "u1"),
            ("row", "<u4"),
            ("col", "<u4"),
            ("delta", "<f4"),
            ("x_lstm", "<f4", M * D),
            ("x_cnn", "<f4", k * k * M * D),
        ],
    )
    rec["label"] = batch.labels
    rec["row"] = batch.pixels[:, 0]
    rec["col"] = batch.pixels[:, 1]
    rec["delta"] = batch.delta
    rec["x_lstm"] = batch.x_lstm.reshape(N, M * D)
    rec["x_cnn"] = batch.x_cnn.reshape(N, k * k * M * D)
    w.raw(rec.tobytes())
    return w.count


def read_samples(source: BinaryIO) -> SampleBatch:
    r = Reader(source)
    r.header(SAMPLE_MAGIC)
    N, code, M, D, k = r.unpack("IBBBB", "sample header")
    season = {v: s for s, v in SEASON_CODES.items()}.get(code)
    if season is None:
        raise FormatError(f"unknown season code {code}")
    dt = np.dtype(
        [
            ("label", "u1"),
            ("row", "<u4"),
            ("col", "<u4"),
            ("delta", "<f4"),
            ("x_lstm", "<f4", M * D),
            ("x_cnn", "<f4", k * k * M * D),
        ]
    )
    rec = np.frombuffer(r.raw(N * dt.itemsize, "sample payload"), dtype=dt)
    r.expect_eof("sample payload")
    return SampleBatch(
        rec["x_lstm"].reshape(N, M, D).astype(np.float32),
        rec["x_cnn"].reshape(N, k, k, M * D).astype(np.float32),
        rec["delta"].astype(np.float32),
        rec["label"].astype(np.uint8),
        np.stack([rec["row"], rec["col"]], axis=1).astype(np.int64),
        season,
    )


def save_samples(batch: SampleBatch, path) -> int:
    return atomic_write(path, write_samples, batch)


def load_samples(path) -> SampleBatch:
    with open(path, "rb") as fh:
        return read_samples(fh)
