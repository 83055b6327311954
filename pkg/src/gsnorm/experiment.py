"""Cross-season domain-shift experiment on a synthetic campaign.

Two unshifted seasons supply training (NW, NE, SE quadrants) and validation
(SW quadrant) samples; a third season with delayed planting is classified
wall-to-wall and scored. Every model is trained once on growth-stage
normalized inputs and, where it does not need delta, once on fixed dates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gsnorm import MASKED
from gsnorm.cube import LabelRaster, TimeSeriesCube, atomic_write
from gsnorm.evaluation import Metrics, confusion_and_metrics, format_table
from gsnorm.features import DateSelector, SampleBatch, extract_batch, fixed_doys_for, homogeneity_mask, sampleable
from gsnorm.model.forest import ForestConfig, forest_train
from gsnorm.model.network import Architecture, init_params
from gsnorm.model.predict import predict_map
from gsnorm.model.train import TrainConfig, train
from gsnorm.phenology import DEFAULT_MIN_AMPLITUDE, PhenologyMap, detect_cube
from gsnorm.preprocess import SmoothingConfig, smooth_cube
from gsnorm.rng import stream
from gsnorm.sampling import TRAIN, VALIDATION, balanced_subsample, quadrant_split
from gsnorm.spectral import add_index_bands
from gsnorm.synth import SynthConfig, generate_campaign

log = logging.getLogger(__name__)

NN_KINDS = ("cnnlstm-delta", "cnnlstm", "cnn", "lstm")

# (season, selector) -> models; "forest" is the bagged-tree baseline
DEFAULT_RUNS = {
    ("late", "gs"): ("cnnlstm-delta", "cnnlstm", "cnn", "lstm", "forest"),
    ("late", "fixed"): ("cnnlstm", "cnn", "lstm", "forest"),
    ("mid", "gs"): ("cnnlstm-delta", "cnnlstm", "forest"),
    ("early", "gs"): ("cnn", "forest"),  # a single date carries no sequence for the recurrent branch
}


@dataclass
class ExperimentConfig:
    seed: int = 0
    size: int = 96
    seasons: tuple = ((2017, 0.0), (2018, 0.0), (2019, 35.0))
    per_class: int = 2000
    val_per_class: int = 300
    epochs: int = 25
    batch_size: int = 256
    n_trees: int = 100
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    min_amplitude: float = DEFAULT_MIN_AMPLITUDE
    runs: dict = field(default_factory=lambda: dict(DEFAULT_RUNS))
    synth: SynthConfig | None = None

    def echo(self) -> dict:
        return {
            "seed": self.seed,
            "size": self.size,
            "seasons": [list(s) for s in self.seasons],
            "per_class": self.per_class,
            "val_per_class": self.val_per_class,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "n_trees": self.n_trees,
            "smoothing": [self.smoothing.window, self.smoothing.polyorder],
            "min_amplitude": self.min_amplitude,
            "runs": {f"{s}/{m}": list(v) for (s, m), v in self.runs.items()},
        }


@dataclass
class Season:
    cube: TimeSeriesCube  # smoothed, with indices
    labels: LabelRaster
    phenology: PhenologyMap
    usable: np.ndarray  # interior pixels with a finite patch

    def selector(self, mode: str, season: str) -> DateSelector:
        if mode == "gs":
            return DateSelector.growth_stage(self.phenology)
        return DateSelector.fixed(fixed_doys_for(self.cube.year, season))


@dataclass
class ExperimentResult:
    metrics: dict = field(default_factory=dict)  # (season, selector, model) -> Metrics
    maps: dict = field(default_factory=dict)  # (season, selector, model) -> LabelRaster
    eval_pixels: int = 0

    def oa(self, season: str, selector: str, model: str) -> float:
        return self.metrics[(season, selector, model)].overall_accuracy

    def best(self, season: str) -> float:
        return max(m.overall_accuracy for (s, _, _), m in self.metrics.items() if s == season)

    def comparison_table(self) -> str:
        """Late-season GS-Norm and Fixed columns side by side."""
        cols = {}
        for (season, sel, model), m in self.metrics.items():
            if season == "late":
                cols[f"{model}/{'GS' if sel == 'gs' else 'Fixed'}"] = m
        return format_table(dict(sorted(cols.items(), key=lambda kv: _column_order(kv[0]))))

    def summary_csv(self) -> str:
        lines = ["season,selector,model,oa,ua_other,ua_corn,ua_soybean,pa_other,pa_corn,pa_soybean"]
        fmt = lambda v: "" if v is None else f"{v:.6f}"  # noqa: E731
        for (season, sel, model), m in self.metrics.items():
            vals = [m.overall_accuracy, *m.user_accuracy, *m.producer_accuracy]
            lines.append(f"{season},{sel},{model}," + ",".join(fmt(v) for v in vals))
        return "\n".join(lines) + "\n"


def _column_order(name: str):
    model, sel = name.split("/")
    order = {k: i for i, k in enumerate((*NN_KINDS, "forest"))}
    return order.get(model, 99), sel != "GS"


def prepare_season(cube: TimeSeriesCube, labels: LabelRaster, config: ExperimentConfig) -> Season:
    smoothed, unusable = smooth_cube(cube, config.smoothing)
    smoothed = add_index_bands(smoothed)
    pheno = detect_cube(smoothed, config.min_amplitude, unusable)
    usable = sampleable(smoothed)
    return Season(smoothed, labels, pheno, usable)


def _candidates(seasons: list[Season], which: int) -> list:
    out = []
    for s_idx, s in enumerate(seasons):
        hom = homogeneity_mask(s.labels).classes
        split = quadrant_split(s.cube.rows, s.cube.cols).excluding(hom).split
        ok = (split == which) & s.usable
        for r, c in np.argwhere(ok):
            out.append(((s_idx, int(r), int(c)), int(hom[r, c])))
    return out


def _extract(seasons: list[Season], picks: list, mode: str, season: str) -> SampleBatch:
    batches = []
    for s_idx, s in enumerate(seasons):
        px = np.array([(r, c) for (i, r, c), _ in picks if i == s_idx], dtype=np.int64).reshape(-1, 2)
        if len(px):
            batches.append(extract_batch(s.cube, s.labels, s.selector(mode, season), px, season))
    return SampleBatch.concat(batches)


def run_experiment(config: ExperimentConfig = ExperimentConfig()) -> ExperimentResult:
    base = config.synth or SynthConfig(rows=config.size, cols=config.size, seed=config.seed)
    campaign = generate_campaign(base, list(config.seasons))
    seasons = [prepare_season(c, l, config) for c, l in campaign]
    train_seasons, test = seasons[:-1], seasons[-1]

    train_picks = balanced_subsample(_candidates(train_seasons, TRAIN), config.per_class, config.seed)
    val_picks = balanced_subsample(_candidates(train_seasons, VALIDATION), config.val_per_class, config.seed + 1)
    log.info("samples: %d train, %d validation", len(train_picks), len(val_picks))

    result = ExperimentResult(eval_pixels=int(test.usable.sum()))
    for (season, mode), models in config.runs.items():
        tr = _extract(train_seasons, train_picks, mode, season)
        va = _extract(train_seasons, val_picks, mode, season)
        selector = test.selector(mode, season)
        # one seed per season: variants differ only in their inputs, not in init or batch order
        run_seed = int(stream(config.seed, f"run/{season}").integers(0, 2**31 - 1))
        for kind in models:
            if kind == "forest":
                fc = ForestConfig(n_trees=config.n_trees, seed=run_seed, include_delta=(mode == "gs" and season == "late"))
                model = forest_train(tr.flat_features(fc.include_delta), tr.labels, fc)
            else:
                arch = Architecture.for_kind(kind, D=tr.x_lstm.shape[2])
                tc = TrainConfig(epochs=config.epochs, batch_size=config.batch_size, seed=run_seed)
                model, _ = train(init_params(arch, run_seed), tr, va, tc)
            pred = predict_map(model, test.cube, test.labels, selector, season)
            m = confusion_and_metrics(pred, test.labels)
            log.info("%s/%s/%s OA %.4f", season, mode, kind, m.overall_accuracy)
            result.metrics[(season, mode, kind)] = m
            result.maps[(season, mode, kind)] = pred
    return result


# --- rendering -----------------------------------------------------------------

PALETTE = np.zeros((256, 3), dtype=np.uint8)
PALETTE[0] = (128, 128, 128)
PALETTE[1] = (255, 210, 0)
PALETTE[2] = (0, 160, 0)
PALETTE[MASKED] = (0, 0, 0)


def ppm_bytes(labels: LabelRaster) -> bytes:
    R, C = labels.classes.shape
    return f"P6\n{C} {R}\n255\n".encode() + PALETTE[labels.classes].tobytes()


def _write_bytes(data: bytes, sink) -> int:
    sink.write(data)
    return len(data)


def write_text(path, text: str) -> int:
    return atomic_write(path, _write_bytes, text.encode())


def write_ppm(path, labels: LabelRaster) -> int:
    return atomic_write(path, _write_bytes, ppm_bytes(labels))


def save_result(result: ExperimentResult, out_dir) -> list[Path]:
    from gsnorm.cube import save_labels

    out = Path(out_dir)
    (out / "maps").mkdir(parents=True, exist_ok=True)
    written = [out / "comparison.txt", out / "metrics.csv"]
    write_text(written[0], result.comparison_table())
    write_text(written[1], result.summary_csv())
    for (season, mode, kind), lab in result.maps.items():
        stem = out / "maps" / f"{season}_{mode}_{kind}"
        save_labels(lab, stem.with_suffix(".gsnl"))
        write_ppm(stem.with_suffix(".ppm"), lab)
        written += [stem.with_suffix(".gsnl"), stem.with_suffix(".ppm")]
    return written
