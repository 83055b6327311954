import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gsnorm import MASKED
from gsnorm.sampling import (
    EXCLUDED,
    TRAIN,
    VALIDATION,
    InsufficientSamplesError,
    balanced_subsample,
    presample,
    quadrant_split,
)


def enumerate_split(rows, cols):
    """Validation is exactly the south-west block below/left of the floor midpoints."""
    return {(r, c) for r in range(rows) for c in range(cols) if r >= rows // 2 and c < cols // 2}


def test_quadrants_4x4():
    s = quadrant_split(4, 4)
    assert (s.split == TRAIN).sum() == 12
    assert {tuple(p) for p in s.pixels(VALIDATION)} == {(r, c) for r in (2, 3) for c in (0, 1)}


def test_quadrants_2x2():
    assert [tuple(p) for p in quadrant_split(2, 2).pixels(VALIDATION)] == [(1, 0)]


def test_quadrants_5x5():
    s = quadrant_split(5, 5)
    assert (s.row_mid, s.col_mid) == (2, 2)
    assert {tuple(p) for p in s.pixels(VALIDATION)} == enumerate_split(5, 5)
    assert len(s.pixels(VALIDATION)) == 6


@given(st.integers(2, 40), st.integers(2, 40))
def test_split_is_partition(rows, cols):
    s = quadrant_split(rows, cols)
    assert set(np.unique(s.split).tolist()) <= {TRAIN, VALIDATION}
    assert len(s.pixels(TRAIN)) + len(s.pixels(VALIDATION)) == rows * cols
    assert {tuple(p) for p in s.pixels(VALIDATION)} == enumerate_split(rows, cols)


def test_split_degenerate():
    with pytest.raises(ValueError):
        quadrant_split(1, 5)


def test_excluding_masked():
    labels = np.zeros((4, 4), np.uint8)
    labels[0, 0] = labels[3, 0] = MASKED
    s = quadrant_split(4, 4).excluding(labels)
    assert s.split[0, 0] == EXCLUDED and s.split[3, 0] == EXCLUDED
    assert (s.split == TRAIN).sum() == 11 and (s.split == VALIDATION).sum() == 3


def cands(counts):
    out = []
    for c, n in enumerate(counts):
        out += [((c, i), c) for i in range(n)]
    return out


def test_balanced_minimum_rule():
    out = balanced_subsample(cands((10, 7, 7)), 0, seed=3)
    assert len(out) == 21
    assert np.bincount([lab for _, lab in out]).tolist() == [7, 7, 7]


def test_balanced_deterministic():
    assert balanced_subsample(cands((10, 7, 7)), 5, 3) == balanced_subsample(cands((10, 7, 7)), 5, 3)


def test_balanced_shortfall_names_class():
    with pytest.raises(InsufficientSamplesError, match="corn: have 50, need 60") as e:
        balanced_subsample(cands((100, 50, 80)), 60, 0)
    assert e.value.shortfall == {1: (50, 60)}


def test_balanced_empty_class():
    with pytest.raises(InsufficientSamplesError):
        balanced_subsample(cands((5, 0, 5)), 0, 0)


@given(st.integers(0, 2**31), st.integers(1, 20))
def test_balanced_uniform_histogram_no_repeats(seed, per_class):
    c = cands((25, 30, 20))
    out = balanced_subsample(c, per_class, seed)
    assert np.bincount([lab for _, lab in out], minlength=3).tolist() == [per_class] * 3
    assert len({p for p, _ in out}) == len(out)
    assert all(item in c for item in out)


def test_seed_changes_selection_not_counts():
    a = balanced_subsample(cands((50, 50, 50)), 10, 1)
    b = balanced_subsample(cands((50, 50, 50)), 10, 2)
    assert a != b
    assert np.bincount([l for _, l in a]).tolist() == np.bincount([l for _, l in b]).tolist()


def test_presample():
    c = cands((30, 30, 30))
    assert presample(c, 0, 1) == c
    sub = presample(c, 20, 1)
    assert len(sub) == 20 and sub == presample(c, 20, 1)
    assert all(item in c for item in sub)
