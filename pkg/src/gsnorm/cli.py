"""Command-line entry point: ``gsnorm <command> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from gsnorm import MASKED, __version__
from gsnorm.cube import LabelRaster, load_cube, load_labels, save_cube, save_labels
from gsnorm.evaluation import class_histograms, confusion_and_metrics, format_csv, format_table
from gsnorm.experiment import ExperimentConfig, run_experiment, save_result, write_ppm, write_text
from gsnorm.features import DateSelector, extract_batch, fixed_doys_for, homogeneity_mask, load_samples, sampleable
from gsnorm.features import save_samples, sieve, SampleBatch
from gsnorm.model.forest import ForestConfig, forest_train, load_forest, save_forest
from gsnorm.model.network import WEIGHTS_MAGIC, Architecture, init_params, load_weights, save_weights
from gsnorm.model.predict import predict_map
from gsnorm.model.train import TrainConfig, train
from gsnorm.phenology import DEFAULT_MIN_AMPLITUDE, detect_cube, load_phenology, save_phenology
from gsnorm.preprocess import SmoothingConfig, smooth_cube
from gsnorm.sampling import TRAIN, VALIDATION, balanced_subsample, presample, quadrant_split
from gsnorm.spectral import add_index_bands
from gsnorm.synth import SynthConfig, generate_campaign, generate_season, load_config, parse_seasons

log = logging.getLogger("gsnorm")

MODEL_CHOICES = ("cnnlstm-delta", "cnnlstm", "cnn", "lstm", "forest")


class CommandError(Exception):
    pass


def write_manifest(path, command: str, config: dict, inputs, outputs, seed, started: float) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "duration_seconds": round(time.perf_counter() - started, 3),
    }
    target = Path(str(path) + ".manifest.json")
    write_text(target, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return target


def _selector(spec: str, year: int, season: str, phenology_path) -> DateSelector:
    if spec == "gs":
        if phenology_path is None:
            raise CommandError("growth-stage selection needs --phenology")
        return DateSelector.growth_stage(load_phenology(phenology_path))
    if spec == "fixed":
        return DateSelector.fixed(fixed_doys_for(year, season))
    if spec.startswith("fixed:"):
        try:
            doys = [int(d) for d in spec[len("fixed:") :].split(",")]
        except ValueError:
            raise CommandError(f"bad fixed DOY list in {spec!r}") from None
        return DateSelector.fixed(doys)
    raise CommandError(f"selector must be 'gs', 'fixed' or 'fixed:DOY,DOY,...', got {spec!r}")


# --- commands -------------------------------------------------------------------


def cmd_synth(a):
    cfg = load_config(a.config) if a.config else SynthConfig()
    if a.seed is not None:
        cfg = dataclasses.replace(cfg, seed=a.seed)
    seasons = parse_seasons(a.seasons)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if len(seasons) == 1:
        (year, shift), = seasons
        pairs = [generate_season(dataclasses.replace(cfg, year=year, shift=shift))]
    else:
        pairs = generate_campaign(cfg, seasons)
    written = []
    for cube, labels in pairs:
        written += [out / f"cube_{cube.year}.gsnc", out / f"labels_{cube.year}.gsnl"]
        save_cube(cube, written[-2])
        save_labels(labels, written[-1])
    config = {"seasons": [list(s) for s in seasons], "synth": dataclasses.asdict(cfg)}
    return out / "synth", config, [a.config] if a.config else [], written, cfg.seed


def cmd_smooth(a):
    cfg = SmoothingConfig(a.window, a.polyorder)
    smoothed, unusable = smooth_cube(load_cube(a.cube), cfg)
    save_cube(smoothed, a.out)
    if unusable.any():
        log.warning("%d pixels have an all-NaN band and stay NaN", int(unusable.sum()))
    return a.out, {"window": a.window, "polyorder": a.polyorder}, [a.cube], [a.out], None


def cmd_indices(a):
    save_cube(add_index_bands(load_cube(a.cube)), a.out)
    return a.out, {}, [a.cube], [a.out], None


def cmd_phenology(a):
    pheno = detect_cube(load_cube(a.cube), a.min_amplitude)
    save_phenology(pheno, a.out)
    log.info("%d of %d pixels valid", int(pheno.valid.sum()), pheno.valid.size)
    return a.out, {"min_amplitude": a.min_amplitude}, [a.cube], [a.out], None


def cmd_features(a):
    cube, labels = load_cube(a.cube), load_labels(a.labels)
    if labels.classes.shape != (cube.rows, cube.cols):
        raise CommandError("labels and cube differ in shape")
    selector = _selector(a.selector, cube.year, a.season, a.phenology)
    hom = homogeneity_mask(labels)
    split = quadrant_split(cube.rows, cube.cols).excluding(hom.classes).split
    ok = sampleable(cube) & (hom.classes != MASKED)
    if a.split == "train":
        ok &= split == TRAIN
    elif a.split == "val":
        ok &= split == VALIDATION
    cands = [((int(r), int(c)), int(hom.classes[r, c])) for r, c in np.argwhere(ok)]
    cands = presample(cands, a.presample, a.seed)
    picks = balanced_subsample(cands, a.per_class, a.seed)
    px = np.array([p for p, _ in picks], dtype=np.int64).reshape(-1, 2)
    batch = extract_batch(cube, hom, selector, px, a.season)
    save_samples(batch, a.out)
    log.info("%d samples (%d per class)", len(batch), len(batch) // 3)
    config = {k: getattr(a, k) for k in ("selector", "season", "split", "per_class", "presample")}
    inputs = [a.cube, a.labels] + ([a.phenology] if a.phenology else [])
    return a.out, config, inputs, [a.out], a.seed


def cmd_train(a):
    tr = SampleBatch.concat([load_samples(p) for p in a.train])
    va = load_samples(a.val) if a.val else None
    outputs = [a.out]
    if a.model == "forest":
        fc = ForestConfig(n_trees=a.trees, seed=a.seed, include_delta=tr.has_delta and tr.season == "late")
        forest = forest_train(tr.flat_features(fc.include_delta), tr.labels, fc)
        save_forest(forest, a.out)
        config = dataclasses.asdict(fc)
    else:
        arch = Architecture.for_kind(a.model, D=tr.x_lstm.shape[2])
        tc = TrainConfig(epochs=a.epochs, batch_size=a.batch, seed=a.seed)
        params, hist = train(init_params(arch, a.seed), tr, va, tc)
        save_weights(params, a.out)
        history = Path(str(a.out) + ".history.csv")
        write_text(history, hist.format())
        outputs.append(history)
        config = {"model": a.model, **dataclasses.asdict(tc)}
    inputs = list(a.train) + ([a.val] if a.val else [])
    return a.out, config, inputs, outputs, a.seed


def _load_model(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == WEIGHTS_MAGIC:
        return load_weights(path)
    return load_forest(path)


def cmd_predict(a):
    cube = load_cube(a.cube)
    model = _load_model(a.model)
    selector = _selector(a.selector, cube.year, a.season, a.phenology)
    mask = load_labels(a.labels) if a.labels else None
    pred = predict_map(model, cube, mask, selector, a.season)
    save_labels(pred, a.out)
    config = {"selector": a.selector, "season": a.season}
    inputs = [a.model, a.cube] + [p for p in (a.phenology, a.labels) if p]
    return a.out, config, inputs, [a.out], None


def cmd_eval(a):
    pred, ref = load_labels(a.pred), load_labels(a.ref)
    if a.sieve:
        pred = sieve(pred, a.sieve)
    m = confusion_and_metrics(pred, ref)
    write_text(a.out, format_table({Path(a.pred).stem: m}) + "\n" + format_csv(m))
    print(f"OA {100 * m.overall_accuracy:.1f}")
    return a.out, {"sieve": a.sieve}, [a.pred, a.ref], [a.out], None


def cmd_map(a):
    write_ppm(a.out, load_labels(a.labels))
    return a.out, {}, [a.labels], [a.out], None


def cmd_hist(a):
    table = class_histograms(load_cube(a.cube), load_labels(a.labels), a.doy)
    write_text(a.out, table.format())
    return a.out, {"doy": a.doy}, [a.cube, a.labels], [a.out], None


def cmd_repro_shift(a):
    cfg = ExperimentConfig(seed=a.seed, size=a.size, per_class=a.per_class, epochs=a.epochs, n_trees=a.trees)
    result = run_experiment(cfg)
    written = save_result(result, a.out_dir)
    print(result.comparison_table(), end="")
    return Path(a.out_dir) / "repro-shift", cfg.echo(), [], written, a.seed


# --- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gsnorm", description="Growth-stage normalized crop mapping pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic campaign")
    s.add_argument("--config", help="flat key=value generator config")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seasons", default="2017:0,2018:0,2019:35", help="YEAR:SHIFT,... (default %(default)s)")
    s.add_argument("--seed", type=int, help="override the config seed")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("smooth", help="gap-fill and Savitzky-Golay smooth a cube")
    s.add_argument("--cube", required=True)
    s.add_argument("--window", type=int, default=7)
    s.add_argument("--polyorder", type=int, default=2)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_smooth)

    s = sub.add_parser("indices", help="(re)compute NDWI, LSWI and NDVI bands")
    s.add_argument("--cube", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_indices)

    s = sub.add_parser("phenology", help="detect greenup, peak and senescence")
    s.add_argument("--cube", required=True)
    s.add_argument("--min-amplitude", type=float, default=DEFAULT_MIN_AMPLITUDE)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_phenology)

    s = sub.add_parser("features", help="extract a balanced sample batch")
    s.add_argument("--cube", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--phenology", help="phenology map (required for --selector gs)")
    s.add_argument("--selector", default="gs", help="gs | fixed | fixed:DOY,DOY,DOY")
    s.add_argument("--season", choices=("early", "mid", "late"), default="late")
    s.add_argument("--split", choices=("train", "val", "all"), default="train")
    s.add_argument("--per-class", type=int, default=0, help="samples per class (0 = smallest class size)")
    s.add_argument("--presample", type=int, default=0, help="random candidate cap before balancing (0 = none)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train", help="train a classifier")
    s.add_argument("--model", choices=MODEL_CHOICES, required=True)
    s.add_argument("--train", nargs="+", required=True)
    s.add_argument("--val")
    s.add_argument("--epochs", type=int, default=25)
    s.add_argument("--batch", type=int, default=256)
    s.add_argument("--trees", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="classify a cube into a label map")
    s.add_argument("--model", required=True)
    s.add_argument("--cube", required=True)
    s.add_argument("--phenology")
    s.add_argument("--labels", help="label raster whose masked (255) pixels are skipped")
    s.add_argument("--selector", default="gs", help="gs | fixed | fixed:DOY,DOY,DOY")
    s.add_argument("--season", choices=("early", "mid", "late"), default="late")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="confusion matrix and accuracies")
    s.add_argument("--pred", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--sieve", type=int, default=0, help="sieve predictions below this size first (0 = off)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("map", help="render a label raster as PPM")
    s.add_argument("--labels", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_map)

    s = sub.add_parser("hist", help="per-class NDVI histogram at one date")
    s.add_argument("--cube", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--doy", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_hist)

    s = sub.add_parser("repro-shift", help="one-shot GS-Norm vs fixed-date experiment")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=96)
    s.add_argument("--per-class", type=int, default=2000)
    s.add_argument("--epochs", type=int, default=25)
    s.add_argument("--trees", type=int, default=100)
    s.set_defaults(func=cmd_repro_shift)
    return p


def _thread_limit():
    value = os.environ.get("GSN_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise CommandError(f"GSN_THREADS must be a positive integer, got {value!r}") from None
    if n < 1:
        raise CommandError(f"GSN_THREADS must be a positive integer, got {value!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    started = time.perf_counter()
    try:
        limiter = _thread_limit()
        try:
            anchor, config, inputs, outputs, seed = args.func(args)
        finally:
            if limiter is not None:
                limiter.unregister()
        write_manifest(anchor, args.command, config, inputs, outputs, seed, started)
    except KeyError as e:
        print(f"gsnorm {args.command}: error: {e.args[0] if e.args else e}", file=sys.stderr)
        return 1
    except (CommandError, ValueError, OSError) as e:
        print(f"gsnorm {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
