"""Wall-to-wall classification of a cube into a label map."""

from __future__ import annotations

import numpy as np

from gsnorm import MASKED
from gsnorm.cube import LabelRaster, TimeSeriesCube
from gsnorm.features import PATCH, DateSelector, extract_batch, sampleable, stage_count
from gsnorm.model.forest import Forest, forest_predict
from gsnorm.model.network import ModelParams, predict_proba


def testable_pixels(cube: TimeSeriesCube, labels: LabelRaster | None = None, k: int = PATCH) -> np.ndarray:
    """Interior pixels with a full finite patch that are not masked in ``labels``.

    Phenology validity is not required: low-amplitude pixels keep best-effort
    stages and are classified like any other.
    """
    ok = sampleable(cube, k)
    if labels is not None:
        if labels.classes.shape != ok.shape:
            raise ValueError("label mask and cube differ in shape")
        ok &= labels.classes != MASKED
    return ok


def _check_mode(model, selector: DateSelector, season: str) -> None:
    D = stage_count(season)
    if isinstance(model, ModelParams):
        if model.arch.D != D:
            raise ValueError(f"model was built for {model.arch.season}-season inputs, not {season}")
        if model.arch.delta and (selector.mode != "gs" or season == "early"):
            raise ValueError(f"{model.arch.kind} needs growth-stage delta; selector/season provide none")
    elif isinstance(model, Forest):
        if model.config.include_delta and (selector.mode != "gs" or season == "early"):
            raise ValueError("forest was trained with delta; selector/season provide none")
    else:
        raise TypeError(f"cannot predict with {type(model).__name__}")


def predict_map(
    model,
    cube: TimeSeriesCube,
    labels: LabelRaster | None,
    selector: DateSelector,
    season: str,
    chunk: int = 4096,
) -> LabelRaster:
    """Classify every testable pixel; the rest are 255.

    Pixels masked (255) in ``labels`` are skipped; ``None`` classifies the
    whole interior. Probability ties go to the lowest class index.
    """
    _check_mode(model, selector, season)
    if selector.mode == "gs" and selector.phenology.valid.shape != (cube.rows, cube.cols):
        raise ValueError("phenology map shape does not match cube")
    ok = testable_pixels(cube, labels)
    out = np.full((cube.rows, cube.cols), MASKED, dtype=np.uint8)
    pixels = np.argwhere(ok)
    for s in range(0, len(pixels), chunk):
        px = pixels[s : s + chunk]
        batch = extract_batch(cube, None, selector, px, season)
        if isinstance(model, Forest):
            pred, _ = forest_predict(model, batch.flat_features(model.config.include_delta))
        else:
            pred = np.argmax(predict_proba(model, batch), axis=1)
        out[px[:, 0], px[:, 1]] = pred
    return LabelRaster(out, cube.year)
