import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gsnorm import MASKED
from gsnorm.cube import LabelRaster, TimeSeriesCube
from gsnorm.evaluation import Metrics, class_histograms, confusion_and_metrics, format_csv, format_table
from oracles import tally


def lab(a):
    return LabelRaster(np.asarray(a, np.uint8), 2019)


def test_identity():
    r = np.random.default_rng(0).integers(0, 3, (10, 10))
    m = confusion_and_metrics(lab(r), lab(r))
    assert m.overall_accuracy == 1.0
    assert m.user_accuracy == [1.0] * 3 and m.producer_accuracy == [1.0] * 3


def test_total_confusion():
    r = np.random.default_rng(0).integers(0, 3, (10, 10))
    m = confusion_and_metrics(lab((r + 1) % 3), lab(r))
    assert m.overall_accuracy == 0.0 and np.trace(m.confusion) == 0


def test_undefined_not_zero():
    ref = lab([[0, 0, 1, 1]])
    m = confusion_and_metrics(lab([[0, 0, 0, 1]]), ref)
    assert m.user_accuracy[2] is None and m.producer_accuracy[2] is None
    assert m.producer_accuracy[1] == 0.5 and m.user_accuracy[0] == pytest.approx(2 / 3)
    assert "undef" in format_table({"x": m})
    assert format_csv(m).splitlines()[3] == "soybean,,,0"


def test_errors():
    with pytest.raises(ValueError, match="shape"):
        confusion_and_metrics(lab([[0]]), lab([[0, 1]]))
    with pytest.raises(ValueError, match="unmasked"):
        confusion_and_metrics(lab([[MASKED]]), lab([[0]]))


@given(st.integers(0, 100_000))
def test_matches_tally(seed):
    r = np.random.default_rng(seed)
    shape = (int(r.integers(1, 15)), int(r.integers(1, 15)))
    vals = np.array([0, 1, 2, MASKED], np.uint8)
    p = r.choice(vals, shape, p=[0.3, 0.3, 0.3, 0.1])
    ref = r.choice(vals, shape, p=[0.3, 0.3, 0.3, 0.1])
    t = tally(p, ref)
    if t.sum() == 0:
        return
    m = confusion_and_metrics(lab(p), lab(ref))
    np.testing.assert_array_equal(m.confusion, t)
    assert m.confusion.sum() == ((p != MASKED) & (ref != MASKED)).sum()
    assert m.overall_accuracy == np.trace(t) / t.sum()
    for c in range(3):
        col, row = t[:, c].sum(), t[c].sum()
        assert m.user_accuracy[c] == (t[c, c] / col if col else None)
        assert m.producer_accuracy[c] == (t[c, c] / row if row else None)


@given(st.integers(0, 100_000), st.permutations([0, 1, 2]))
def test_permutation_consistency(seed, perm):
    r = np.random.default_rng(seed)
    p, ref = r.integers(0, 3, (6, 6)), r.integers(0, 3, (6, 6))
    perm = np.array(perm)
    a = confusion_and_metrics(lab(p), lab(ref))
    b = confusion_and_metrics(lab(perm[p]), lab(perm[ref]))
    assert a.overall_accuracy == b.overall_accuracy
    for c in range(3):
        assert a.user_accuracy[c] == b.user_accuracy[perm[c]]
        assert a.producer_accuracy[c] == b.producer_accuracy[perm[c]]


def test_from_confusion_rejects_empty():
    with pytest.raises(ValueError):
        Metrics.from_confusion(np.zeros((3, 3), int))


def test_table_layout():
    m = confusion_and_metrics(lab([[0, 1, 2, 2]]), lab([[0, 1, 2, 1]]))
    lines = format_table({"cnn/GS": m}).splitlines()
    assert lines[1].startswith("Overall accuracy") and lines[1].endswith("75.0")
    assert lines[2] == "Precision (UA)" and lines[6] == "Recall (PA)"
    assert format_csv(m).splitlines()[-1] == "OA,0.750000,,4"


def _ndvi_cube(values, doys=(150, 160)):
    v = np.asarray(values, np.float32)
    data = np.stack([v] * len(doys))[None]
    return TimeSeriesCube(["NDVI"], list(doys), 2018, data)


def test_histogram_single_class():
    h = class_histograms(_ndvi_cube(np.full((3, 3), 0.3)), lab(np.ones((3, 3))), 150)
    assert h.counts[0].sum() == 0 and h.counts[2].sum() == 0 and h.counts[1].sum() == 9
    assert h.means[0] is None


def test_histogram_constant_half():
    h = class_histograms(_ndvi_cube(np.full((4, 4), 0.5)), lab(np.zeros((4, 4))), 150)
    assert h.counts[0].tolist() == [0] * 5 + [16] + [0] * 4


def test_histogram_nearest_date_and_mask():
    cube = _ndvi_cube(np.full((2, 2), 0.5))
    cube.data[0, 1] = 0.95
    labels = lab([[0, 0], [MASKED, 0]])
    h = class_histograms(cube, labels, 158)
    assert h.doy == 160 and h.counts[0, 9] == 3 and h.counts.sum() == 3
    assert h.format().splitlines()[0] == "# NDVI histogram at DOY 160"
