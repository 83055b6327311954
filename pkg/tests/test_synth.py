import dataclasses

import numpy as np
import pytest

from gsnorm import CORN, MASKED, OTHER, SOYBEAN
from gsnorm.cube import LabelRaster
from gsnorm.evaluation import class_histograms, confusion_and_metrics
from gsnorm.features import DateSelector, extract_batch, fixed_doys_for, homogeneity_mask
from gsnorm.experiment import ExperimentConfig, prepare_season
from gsnorm.model.forest import ForestConfig, forest_predict, forest_train
from gsnorm.phenology import detect_stages
from gsnorm.synth import (
    SynthConfig,
    config_from_text,
    config_to_text,
    double_logistic,
    double_logistic_slope,
    generate_campaign,
    generate_season,
    parse_seasons,
    tile_fields,
)

CLEAN = dict(noise_optical=0.0, noise_sar=0.0, dropout=0.0)


def small(**kw):
    return SynthConfig(rows=40, cols=40, **kw)


def test_slope_is_derivative_of_curve():
    t = np.linspace(60, 360, 301)
    args = (0.15, 0.7, 140, 262, 0.09, 0.08)
    h = 1e-4
    num = (double_logistic(t + h, *args) - double_logistic(t - h, *args)) / (2 * h)
    np.testing.assert_allclose(double_logistic_slope(t, *args), num, atol=1e-8)


def test_tiling_covers_raster_once():
    cfg = small(seed=3)
    cover = np.zeros((40, 40), int)
    for r0, r1, c0, c1 in tile_fields(cfg):
        assert cfg.field_min <= r1 - r0 and cfg.field_min <= c1 - c0
        cover[r0:r1, c0:c1] += 1
    assert (cover == 1).all()


def test_clean_fields_are_uniform_and_greenup_matches_analytic_peak_slope():
    cfg = small(seed=1, **CLEAN)
    cube, labels = generate_season(cfg)
    ndvi = cube.band("NDVI")
    doys = cube.doys
    T = len(doys)
    fine = np.arange(doys[0], doys[T // 2 - 1] + 7, 0.01)
    checked = 0
    for r0, r1, c0, c1 in tile_fields(cfg):
        block = ndvi[:, r0:r1, c0:c1]
        assert (block == block[:, :1, :1]).all()
        if labels.classes[r0, c0] != CORN:
            continue
        series = block[:, 0, 0].astype(np.float64)
        # invert the generator for this field: NDVI equals the double-logistic exactly without noise
        g, _, _ = detect_stages(series, doys)
        best = None
        for t1 in np.arange(130, 151, 0.25):
            curve = double_logistic(doys, 0.15, 0.7, t1, 262, 0.09, 0.08)
            err = np.abs(np.diff(curve) - np.diff(series)).max()
            best = (err, t1) if best is None or err < best[0] else best
        t1 = best[1]
        amp = 0.7
        t_star = fine[np.argmax(double_logistic_slope(fine, 0.15, amp, t1, 262, 0.09, 0.08))]
        assert abs(doys[g] + 3.5 - t_star) <= 7 + 3.5
        checked += 1
    assert checked


def test_shift_moves_detected_greenup():
    base = small(seed=2, **CLEAN)
    a, la = generate_season(base)
    b, _ = generate_season(dataclasses.replace(base, shift=35.0))
    doys = a.doys
    for r0, r1, c0, c1 in tile_fields(base):
        if la.classes[r0, c0] == OTHER:
            continue
        ga = detect_stages(a.band("NDVI")[:, r0, c0].astype(np.float64), doys)[0]
        gb = detect_stages(b.band("NDVI")[:, r0, c0].astype(np.float64), doys)[0]
        assert abs((doys[gb] - doys[ga]) - 35) <= base.doy_step


def test_shift_changes_timing_not_peak_values():
    base = small(seed=4, **CLEAN)
    a, la = generate_season(base)
    b, lb = generate_season(dataclasses.replace(base, shift=35.0))
    assert np.array_equal(la.classes, lb.classes)
    peak_a, peak_b = a.band("NDVI").max(axis=0), b.band("NDVI").max(axis=0)
    for c in (OTHER, CORN, SOYBEAN):
        m = la.classes == c
        if m.any():
            assert abs(peak_a[m].mean() - peak_b[m].mean()) < 0.01


def test_mix_without_other():
    cfg = small(seed=5, mix=(0.0, 0.5, 0.5))
    _, labels = generate_season(cfg)
    assert not (labels.classes == OTHER).any()
    counts = np.zeros(3, int)
    for r0, r1, c0, c1 in tile_fields(cfg):
        block = labels.classes[r0:r1, c0:c1]
        assert (block == block[0, 0]).all()
        counts[block[0, 0]] += block.size
    np.testing.assert_array_equal(np.bincount(labels.classes.ravel(), minlength=3), counts)


def test_indices_consistent_with_bands_and_dropout():
    cube, _ = generate_season(small(seed=6, dropout=0.2))
    nir, red, green, swir1 = (cube.band(b).astype(np.float64) for b in ("NIR", "RED", "GREEN", "SWIR1"))
    np.testing.assert_allclose(cube.band("NDVI"), (nir - red) / (nir + red), atol=1e-6)
    np.testing.assert_allclose(cube.band("NDWI"), (green - swir1) / (green + swir1), atol=1e-6)
    np.testing.assert_allclose(cube.band("LSWI"), (nir - swir1) / (nir + swir1), atol=1e-6)
    cloudy = np.isnan(cube.band("RED"))
    assert 0.15 < cloudy.mean() < 0.25
    assert np.isnan(cube.band("NDVI")[cloudy]).all() and np.isfinite(cube.band("VV")).all()


def test_season_deterministic():
    a, la = generate_season(small(seed=7))
    b, lb = generate_season(small(seed=7))
    assert a == b and la == lb
    c, _ = generate_season(small(seed=8))
    assert not a == c


def test_campaign():
    seasons = [(2017, 0), (2018, 0), (2019, 35)]
    camp = generate_campaign(small(seed=9), seasons)
    assert [c.year for c, _ in camp] == [2017, 2018, 2019]
    again = generate_campaign(small(seed=9), seasons)
    assert all(a[0] == b[0] and a[1] == b[1] for a, b in zip(camp, again))
    means = [class_histograms(c, l, 160).means for c, l in camp]
    for cls in (CORN, SOYBEAN):
        assert abs(means[0][cls] - means[1][cls]) < 0.05
        assert means[0][cls] - means[2][cls] > 0.1
    with pytest.raises(ValueError, match="two"):
        generate_campaign(small(), [(2017, 0)])
    with pytest.raises(ValueError, match="duplicate"):
        generate_campaign(small(), [(2017, 0), (2017, 35)])


def test_same_distribution_season_is_separable():
    camp = generate_campaign(SynthConfig(rows=64, cols=64, seed=11), [(2017, 0), (2018, 0)])
    cfg = ExperimentConfig()
    seasons = [prepare_season(c, l, cfg) for c, l in camp]
    feats = []
    for s in seasons:
        hom = homogeneity_mask(s.labels).classes
        px = np.argwhere(s.usable & (hom != MASKED))
        sel = DateSelector.fixed(fixed_doys_for(s.cube.year, "late"))
        feats.append((extract_batch(s.cube, s.labels, sel, px, "late"), px))
    (tr, _), (te, px) = feats
    forest = forest_train(tr.flat_features(False), tr.labels, ForestConfig(n_trees=30, include_delta=False))
    pred = np.full((64, 64), MASKED, np.uint8)
    pred[px[:, 0], px[:, 1]] = forest_predict(forest, te.flat_features(False))[0]
    assert confusion_and_metrics(LabelRaster(pred, 2018), seasons[1].labels).overall_accuracy >= 0.95


def test_validate_rejects_bad_configs():
    with pytest.raises(ValueError, match="mix"):
        SynthConfig(mix=(0.5, 0.6, 0.0)).validate()
    cfg = SynthConfig()
    cfg.classes["corn"].t2 = 200
    with pytest.raises(ValueError, match="longer season"):
        cfg.validate()
    with pytest.raises(ValueError, match="DOY"):
        SynthConfig(timesteps=60).validate()


def test_config_text_roundtrip():
    cfg = config_from_text("rows = 32\ncols=48  # comment\nmix = 0.2, 0.4, 0.4\ncorn.t1 = 135.5\nsoybean.vv = 0.04, 0.05\n")
    assert (cfg.rows, cfg.cols, cfg.mix) == (32, 48, (0.2, 0.4, 0.4))
    assert cfg.classes["corn"].t1 == 135.5 and cfg.classes["soybean"].vv == (0.04, 0.05)
    assert SynthConfig().classes["corn"].t1 == 140
    again = config_from_text(config_to_text(cfg))
    assert again == cfg


@pytest.mark.parametrize(
    "text,msg",
    [("rows 3", "key = value"), ("bogus = 1", "unknown"), ("corn.vv = 1", "intercept"), ("rows = x", "bad value"), ("corn.emergence = 1, 2", "six")],
)
def test_config_errors(text, msg):
    with pytest.raises(ValueError, match=msg):
        config_from_text(text)


def test_parse_seasons():
    assert parse_seasons("2017:0, 2018, 2019:35") == [(2017, 0.0), (2018, 0.0), (2019, 35.0)]
