"""Synthetic seasons with a controllable planting delay.

Fields are axis-aligned rectangles of one class. Each field draws a
double-logistic NDVI curve

    ndvi(t) = base + amp * (sigmoid(k1 (t - t1)) - sigmoid(k2 (t - t2)))

with per-field jitter, and the planting shift moves t1 and t2 of shift-sensitive
classes. Reflectance follows linear responses to NDVI; NIR and RED are split
from a class brightness so that (NIR - RED) / (NIR + RED) reproduces the curve
exactly. SAR backscatter tracks the normalized greenness of the same curve.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gsnorm import CLASS_NAMES, CHANNELS
from gsnorm.cube import LabelRaster, TimeSeriesCube
from gsnorm.rng import stream
from gsnorm.spectral import ndvi as ndvi_index
from gsnorm.spectral import lswi, ndwi

OPTICAL = ("BLUE", "GREEN", "RED", "NIR", "SWIR1", "SWIR2", "NDWI", "LSWI", "NDVI")
SYNTH_BANDS = CHANNELS + ("NDVI",)
SIGNATURE_BANDS = ("BLUE", "GREEN", "SWIR1", "SWIR2", "VV", "VH")


@dataclass
class ClassProfile:
    base: float
    amp: float
    t1: float
    t2: float
    k1: float
    k2: float
    brightness: float  # NIR + RED
    blue: tuple[float, float]  # intercept, slope against NDVI
    green: tuple[float, float]
    swir1: tuple[float, float]
    swir2: tuple[float, float]
    vv: tuple[float, float]  # intercept, slope against normalized greenness
    vh: tuple[float, float]
    # per-band offsets (BLUE, GREEN, SWIR1, SWIR2, VV, VH) that fade in with the
    # greenup ramp and with the senescence ramp: stage-specific signatures
    emergence: tuple = (0.0,) * 6
    senescence: tuple = (0.0,) * 6
    shifted: bool = True


def _default_classes() -> dict[str, ClassProfile]:
    # corn and soybean share their NDVI-driven band responses; what separates
    # them is season length plus small stage-specific signatures
    crop = dict(
        brightness=0.46, blue=(0.085, -0.05), green=(0.11, -0.03), swir1=(0.30, -0.16), swir2=(0.23, -0.15),
        vv=(0.050, 0.045), vh=(0.010, 0.021),
    )
    return {
        "corn": ClassProfile(
            base=0.15, amp=0.70, t1=140, t2=262, k1=0.09, k2=0.08, **crop,
            emergence=(0.0, 0.005, 0.0, 0.0, 0.006, 0.002),
            senescence=(0.0, 0.0, 0.015, 0.012, 0.004, 0.0015),
        ),
        "soybean": ClassProfile(base=0.15, amp=0.68, t1=150, t2=244, k1=0.10, k2=0.09, **crop),
        "other": ClassProfile(
            base=0.30, amp=0.22, t1=115, t2=285, k1=0.06, k2=0.05, brightness=0.40,
            blue=(0.09, -0.04), green=(0.115, -0.03), swir1=(0.27, -0.10), swir2=(0.20, -0.10),
            vv=(0.060, 0.010), vh=(0.012, 0.004), shifted=False,
        ),
    }


@dataclass
class SynthConfig:
    rows: int = 96
    cols: int = 96
    field_min: int = 7
    field_max: int = 16
    mix: tuple[float, float, float] = (0.34, 0.33, 0.33)  # other, corn, soybean
    timesteps: int = 40
    doy_start: int = 80
    doy_step: int = 7
    year: int = 2017
    seed: int = 0
    noise_optical: float = 0.01
    noise_sar: float = 0.003
    dropout: float = 0.05
    shift: float = 0.0
    shift_jitter: float = 0.0
    pheno_jitter: float = 5.0
    amp_jitter: float = 0.05
    band_jitter: float = 0.01
    brightness_jitter: float = 0.03
    sar_jitter: float = 0.004
    classes: dict[str, ClassProfile] = field(default_factory=_default_classes)

    def validate(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValueError("raster must be at least 1x1")
        if not 1 <= self.field_min <= self.field_max:
            raise ValueError("need 1 <= field_min <= field_max")
        if len(self.mix) != 3 or min(self.mix) < 0 or abs(sum(self.mix) - 1) > 1e-9:
            raise ValueError(f"class mix must be three nonnegative fractions summing to 1, got {self.mix}")
        if self.timesteps < 4 or self.doy_step < 1:
            raise ValueError("need >= 4 timesteps and a positive DOY step")
        last = self.doy_start + self.doy_step * (self.timesteps - 1)
        if self.doy_start < 1 or last > 366:
            raise ValueError(f"DOY grid {self.doy_start}..{last} leaves 1..366")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout probability must lie in [0, 1)")
        if set(self.classes) != set(CLASS_NAMES):
            raise ValueError(f"class profiles must be exactly {CLASS_NAMES}")
        for name, p in self.classes.items():
            if not p.t1 < p.t2:
                raise ValueError(f"{name}: t1 must precede t2")
        corn, soy, other = self.classes["corn"], self.classes["soybean"], self.classes["other"]
        if not corn.t2 - corn.t1 > soy.t2 - soy.t1:
            raise ValueError("corn must have a longer season (t2 - t1) than soybean")
        if not other.amp < min(corn.amp, soy.amp):
            raise ValueError("the other class must have a lower amplitude than the crops")

    @property
    def doys(self) -> np.ndarray:
        return self.doy_start + self.doy_step * np.arange(self.timesteps)


def double_logistic(t, base, amp, t1, t2, k1, k2):
    t = np.asarray(t, dtype=np.float64)
    return base + amp * (1 / (1 + np.exp(-k1 * (t - t1))) - 1 / (1 + np.exp(-k2 * (t - t2))))


def double_logistic_slope(t, base, amp, t1, t2, k1, k2):
    t = np.asarray(t, dtype=np.float64)
    s1 = 1 / (1 + np.exp(-k1 * (t - t1)))
    s2 = 1 / (1 + np.exp(-k2 * (t - t2)))
    return amp * (k1 * s1 * (1 - s1) - k2 * s2 * (1 - s2))


def tile_fields(config: SynthConfig) -> list[tuple[int, int, int, int]]:
    """Split the raster into rectangles ``(r0, r1, c0, c1)`` with sides in the configured range."""
    rng = stream(config.seed, "layout")

    def cuts(n: int) -> list[int]:
        edges = [0]
        while n - edges[-1] > config.field_max:
            edges.append(edges[-1] + int(rng.integers(config.field_min, config.field_max + 1)))
        if len(edges) > 1 and n - edges[-1] < config.field_min:
            edges.pop()
        edges.append(n)
        return edges

    fields = []
    re = cuts(config.rows)
    for r0, r1 in zip(re[:-1], re[1:]):
        ce = cuts(config.cols)
        fields.extend((r0, r1, c0, c1) for c0, c1 in zip(ce[:-1], ce[1:]))
    return fields


def generate_season(config: SynthConfig) -> tuple[TimeSeriesCube, LabelRaster]:
    config.validate()
    doys = config.doys
    T, R, C = config.timesteps, config.rows, config.cols
    data = np.empty((len(SYNTH_BANDS), T, R, C), dtype=np.float64)
    labels = np.zeros((R, C), dtype=np.uint8)
    fields = tile_fields(config)
    classes = stream(config.seed, "classes").choice(3, size=len(fields), p=np.asarray(config.mix, dtype=np.float64))
    band = {b: i for i, b in enumerate(SYNTH_BANDS)}

    for f, ((r0, r1, c0, c1), cls) in enumerate(zip(fields, classes)):
        labels[r0:r1, c0:c1] = cls
        p = config.classes[CLASS_NAMES[cls]]
        rng = stream(config.seed, "field", f)
        shift = 0.0
        if p.shifted:
            shift = config.shift + rng.uniform(-config.shift_jitter, config.shift_jitter)
        t1 = p.t1 + shift + rng.uniform(-config.pheno_jitter, config.pheno_jitter)
        t2 = p.t2 + shift + rng.uniform(-config.pheno_jitter, config.pheno_jitter)
        amp = p.amp + rng.uniform(-config.amp_jitter, config.amp_jitter)
        curve = double_logistic(doys, p.base, amp, t1, t2, p.k1, p.k2)
        green_norm = (curve - p.base) / amp
        ramp_e = 1 / (1 + np.exp(-p.k1 * (doys - t1)))
        ramp_s = 1 / (1 + np.exp(-p.k2 * (doys - t2)))
        sig = {b: p.emergence[i] * ramp_e + p.senescence[i] * ramp_s for i, b in enumerate(SIGNATURE_BANDS)}
        jb = lambda: rng.uniform(-config.band_jitter, config.band_jitter)  # noqa: E731
        js = lambda: rng.uniform(-config.sar_jitter, config.sar_jitter)  # noqa: E731
        bright = p.brightness + rng.uniform(-config.brightness_jitter, config.brightness_jitter)
        means = {
            "NIR": bright / 2 * (1 + curve),
            "RED": bright / 2 * (1 - curve),
            "BLUE": p.blue[0] + jb() + p.blue[1] * curve + sig["BLUE"],
            "GREEN": p.green[0] + jb() + p.green[1] * curve + sig["GREEN"],
            "SWIR1": p.swir1[0] + jb() + p.swir1[1] * curve + sig["SWIR1"],
            "SWIR2": p.swir2[0] + jb() + p.swir2[1] * curve + sig["SWIR2"],
            "VV": p.vv[0] + (p.vv[1] + js()) * green_norm + sig["VV"],
            "VH": p.vh[0] + (p.vh[1] + js()) * green_norm + sig["VH"],
        }
        noise = stream(config.seed, "noise", f)
        shape = (T, r1 - r0, c1 - c0)
        for name in ("BLUE", "GREEN", "RED", "NIR", "SWIR1", "SWIR2", "VV", "VH"):
            sd = config.noise_sar if name in ("VV", "VH") else config.noise_optical
            plane = means[name][:, None, None] + (noise.normal(0, sd, size=shape) if sd > 0 else 0)
            data[band[name], :, r0:r1, c0:c1] = plane
        block = data[:, :, r0:r1, c0:c1]
        block[band["NDWI"]] = ndwi(block[band["GREEN"]], block[band["SWIR1"]])
        block[band["LSWI"]] = lswi(block[band["NIR"]], block[band["SWIR1"]])
        block[band["NDVI"]] = ndvi_index(block[band["NIR"]], block[band["RED"]])
        if config.dropout > 0:
            cloudy = noise.random(shape) < config.dropout
            for name in OPTICAL:
                block[band[name]][cloudy] = np.nan

    cube = TimeSeriesCube(list(SYNTH_BANDS), doys, config.year, data.astype(np.float32))
    return cube, LabelRaster(labels, config.year)


def generate_campaign(base: SynthConfig, seasons: list[tuple[int, float]]):
    """One season per ``(year, shift)``; each year gets its own derived seed."""
    if len(seasons) < 2:
        raise ValueError("a campaign needs at least two seasons")
    years = [y for y, _ in seasons]
    if len(set(years)) != len(years):
        raise ValueError(f"duplicate years in campaign: {years}")
    out = []
    for year, shift in seasons:
        seed = int(stream(base.seed, "season", year).integers(0, 2**63 - 1))
        cfg = dataclasses.replace(base, year=int(year), shift=float(shift), seed=seed)
        out.append(generate_season(cfg))
    return out


def parse_seasons(spec: str) -> list[tuple[int, float]]:
    """Parse ``"2017:0,2018:0,2019:35"``."""
    out = []
    for part in spec.split(","):
        year, _, shift = part.strip().partition(":")
        out.append((int(year), float(shift or 0)))
    return out


# --- flat key=value config files ---------------------------------------------------

_PROFILE_PAIRS = ("blue", "green", "swir1", "swir2", "vv", "vh")
_PROFILE_SIGNATURES = ("emergence", "senescence")


def _parse_value(text: str):
    parts = [p.strip() for p in text.split(",")]
    vals = []
    for p in parts:
        if p.lower() in ("true", "false"):
            vals.append(p.lower() == "true")
        else:
            num = float(p)
            vals.append(int(num) if num.is_integer() and "." not in p and "e" not in p.lower() else num)
    return tuple(vals) if len(vals) > 1 else vals[0]


def config_from_text(text: str, base: SynthConfig | None = None) -> SynthConfig:
    """Read ``key = value`` lines; ``#`` starts a comment.

    Class profile keys are dotted (``corn.t1 = 140``, ``soybean.swir1 = 0.30, -0.15``).
    """
    cfg = dataclasses.replace(base or SynthConfig())
    cfg.classes = {k: dataclasses.replace(v) for k, v in cfg.classes.items()}
    top = {f.name for f in dataclasses.fields(SynthConfig)} - {"classes"}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ValueError(f"line {lineno}: expected key = value")
        try:
            val = _parse_value(value)
        except ValueError:
            raise ValueError(f"line {lineno}: bad value {value.strip()!r}") from None
        if "." in key:
            cname, attr = key.split(".", 1)
            if cname not in cfg.classes or attr not in {f.name for f in dataclasses.fields(ClassProfile)}:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            if attr in _PROFILE_PAIRS and not (isinstance(val, tuple) and len(val) == 2):
                raise ValueError(f"line {lineno}: {key} needs 'intercept, slope'")
            if attr in _PROFILE_SIGNATURES and not (isinstance(val, tuple) and len(val) == 6):
                raise ValueError(f"line {lineno}: {key} needs six per-band offsets")
            setattr(cfg.classes[cname], attr, val)
        elif key in top:
            if key == "mix" and not isinstance(val, tuple):
                raise ValueError(f"line {lineno}: mix needs three comma-separated fractions")
            setattr(cfg, key, val)
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    cfg.validate()
    return cfg


def config_to_text(cfg: SynthConfig) -> str:
    fmt = lambda v: ", ".join(repr(x) for x in v) if isinstance(v, tuple) else repr(v)  # noqa: E731
    lines = [f"{f.name} = {fmt(getattr(cfg, f.name))}" for f in dataclasses.fields(SynthConfig) if f.name != "classes"]
    for cname, p in cfg.classes.items():
        lines += [f"{cname}.{f.name} = {fmt(getattr(p, f.name))}" for f in dataclasses.fields(ClassProfile)]
    return "\n".join(lines) + "\n"


def load_config(path) -> SynthConfig:
    return config_from_text(Path(path).read_text())
