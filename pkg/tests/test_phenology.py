import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gsnorm.cube import TimeSeriesCube
from gsnorm.phenology import (
    InvalidPixelError,
    PhenologyMap,
    detect_cube,
    detect_stages,
    growing_days,
    read_phenology,
    save_phenology,
    load_phenology,
    write_phenology,
)
from oracles import exhaustive_stages, random_smooth_series

TRIANGLE = [0.1, 0.3, 0.9, 0.3, 0.1]
TRIANGLE_DOYS = [100, 130, 160, 190, 220]


def test_triangle():
    # slopes: 0.00667, 0.02, -0.02, -0.00667; first half is i < 2
    assert detect_stages(TRIANGLE, TRIANGLE_DOYS) == (1, 2, 2)
    assert detect_stages(TRIANGLE, TRIANGLE_DOYS) == exhaustive_stages(TRIANGLE, TRIANGLE_DOYS)


def test_triangle_shifted():
    assert detect_stages(TRIANGLE, [d + 35 for d in TRIANGLE_DOYS]) == (1, 2, 2)


def test_flat_series_ties_earliest():
    assert detect_stages([0.2] * 4, [1, 2, 3, 4]) == (0, 0, 1)


def test_too_short():
    with pytest.raises(ValueError, match="at least 4"):
        detect_stages([0.1, 0.2, 0.3], [1, 2, 3])


def test_nan_series_invalid():
    with pytest.raises(InvalidPixelError):
        detect_stages([0.1, np.nan, 0.3, 0.2], [1, 2, 3, 4])


def test_growing_days():
    # reported mean greenup and senescence DOYs over 2017-2019 are 144 and 278
    assert growing_days(144, 278) == 134
    assert growing_days(100, 101) == 1
    with pytest.raises(ValueError):
        growing_days(200, 150)


@given(st.integers(0, 100_000))
def test_matches_exhaustive_scan(seed):
    y, d = random_smooth_series(np.random.default_rng(seed))
    assert detect_stages(y, d) == exhaustive_stages(y, d)


@given(st.integers(0, 100_000), st.integers(-50, 50))
def test_shift_equivariance_and_ordering(seed, k):
    y, d = random_smooth_series(np.random.default_rng(seed), start=60)
    g, p, s = detect_stages(y, d)
    assert detect_stages(y, d + k) == (g, p, s)
    assert g <= p <= s and g < s and g < len(y) // 2


def _cube(ndvi, doys):
    ndvi = np.asarray(ndvi, np.float32)
    return TimeSeriesCube(["NDVI"], doys, 2018, ndvi.reshape(1, *ndvi.shape))


def test_uniform_cube():
    data = np.repeat(np.array(TRIANGLE, np.float32)[:, None, None], 6, axis=1).repeat(4, axis=2)
    pm = detect_cube(_cube(data, TRIANGLE_DOYS))
    assert (pm.idx[0] == 1).all() and (pm.idx[1] == 2).all() and (pm.idx[2] == 2).all()
    assert (pm.delta == 30).all() and pm.valid.all()


def test_nan_pixel_and_flat_pixel_invalid_but_kept():
    data = np.repeat(np.array(TRIANGLE, np.float32)[:, None, None], 3, axis=1).repeat(3, axis=2)
    data[:, 0, 0] = np.nan
    data[:, 1, 1] = 0.2
    pm = detect_cube(_cube(data, TRIANGLE_DOYS))
    assert not pm.valid[0, 0] and not pm.valid[1, 1]
    assert pm.valid.sum() == 7
    assert tuple(pm.idx[:, 1, 1]) == (0, 0, 1)


def test_unusable_flag_invalidates():
    data = np.repeat(np.array(TRIANGLE, np.float32)[:, None, None], 2, axis=1).repeat(2, axis=2)
    unusable = np.array([[False, True], [False, False]])
    assert detect_cube(_cube(data, TRIANGLE_DOYS), unusable=unusable).valid.tolist() == [[True, False], [True, True]]


def test_missing_ndvi_band():
    cube = TimeSeriesCube(["RED"], [1, 2, 3, 4], 2018, np.zeros((1, 4, 2, 2), np.float32))
    with pytest.raises(KeyError):
        detect_cube(cube)


def test_detect_cube_is_per_pixel_detect_stages(rng):
    T, R, C = 20, 5, 6
    doys = 80 + 8 * np.arange(T)
    data = np.empty((T, R, C), np.float32)
    for r in range(R):
        for c in range(C):
            data[:, r, c] = random_smooth_series(rng, T=T, step=8, start=80)[0]
    pm = detect_cube(_cube(data, doys))
    for r in range(R):
        for c in range(C):
            stages = detect_stages(data[:, r, c].astype(np.float64), doys)
            assert tuple(pm.idx[:, r, c]) == stages
            np.testing.assert_array_equal(pm.doy[:, r, c], doys[list(stages)])
            assert pm.delta[r, c] == doys[stages[2]] - doys[stages[0]]


def _random_map(rng, R, C):
    idx = np.sort(rng.integers(0, 60, size=(3, R, C)), axis=0)
    doy = idx * 5 + 50
    return PhenologyMap(idx, doy, doy[2] - doy[0], rng.random((R, C)) < 0.7)


def test_gsnp_roundtrip_and_header(rng):
    pm = _random_map(rng, 3, 4)
    buf = io.BytesIO()
    n = write_phenology(pm, buf)
    raw = buf.getvalue()
    assert raw[:4] == b"GSNP" and raw[4:6] == b"\x01\x00"
    assert n == len(raw) == 4 + 2 + 4 + 4 + 12 * (3 * 2 + 3 * 2 + 2 + 1)
    assert read_phenology(io.BytesIO(raw)) == pm


def test_gsnp_file_roundtrip(tmp_path, rng):
    pm = _random_map(rng, 7, 2)
    save_phenology(pm, tmp_path / "p.gsnp")
    assert load_phenology(tmp_path / "p.gsnp") == pm
