import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gsnorm.cube import TimeSeriesCube
from gsnorm.spectral import add_index_bands, lswi, ndvi, ndwi

pos = st.floats(1e-6, 10.0, allow_nan=False)


@pytest.mark.parametrize(
    "fn,a,b,expected",
    [
        (ndwi, 0.2, 0.2, 0.0),
        (ndwi, 0.1, 0.3, -0.5),
        (lswi, 0.4, 0.4, 0.0),
        (lswi, 0.5, 0.25, 1 / 3),
        (ndvi, 0.3, 0.3, 0.0),
        (ndvi, 0.6, 0.1, 0.5 / 0.7),
        (ndvi, 0.05, 0.45, -0.8),
    ],
)
def test_hand_values(fn, a, b, expected):
    assert fn(a, b) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("fn", [ndwi, lswi, ndvi])
def test_zero_denominator_is_nan(fn):
    assert np.isnan(fn(0.0, 0.0))
    assert np.isnan(fn(1e-13, 0.0))


@given(pos, pos, st.floats(1e-3, 1e3))
def test_range_scale_and_antisymmetry(a, b, k):
    v = ndvi(a, b)
    assert -1 <= v <= 1
    assert ndvi(k * a, k * b) == pytest.approx(v, abs=1e-12)
    assert ndvi(b, a) == pytest.approx(-v, abs=1e-12)


def _cube(values, bands=("GREEN", "RED", "NIR", "SWIR1")):
    data = np.array(values, np.float32).reshape(len(bands), 1, 1, 1)
    return TimeSeriesCube(list(bands), [100], 2018, data)


def test_add_index_bands_hand_values():
    out = add_index_bands(_cube([0.1, 0.1, 0.5, 0.3]))
    assert out.bands[-3:] == ["NDWI", "LSWI", "NDVI"]
    assert out.band("NDWI")[0, 0, 0] == pytest.approx(-0.5, abs=1e-7)
    assert out.band("LSWI")[0, 0, 0] == pytest.approx(0.25, abs=1e-7)
    assert out.band("NDVI")[0, 0, 0] == pytest.approx(2 / 3, abs=1e-7)


def test_missing_band_named():
    with pytest.raises(KeyError, match="SWIR1"):
        add_index_bands(_cube([0.1, 0.1, 0.5], bands=("GREEN", "RED", "NIR")))


def test_nan_nir_propagates():
    out = add_index_bands(_cube([0.1, 0.1, np.nan, 0.3]))
    assert np.isnan(out.band("LSWI")[0, 0, 0]) and np.isnan(out.band("NDVI")[0, 0, 0])
    assert np.isfinite(out.band("NDWI")[0, 0, 0])


def test_recomputing_overwrites_instead_of_duplicating():
    once = add_index_bands(_cube([0.1, 0.1, 0.5, 0.3]))
    twice = add_index_bands(once)
    assert twice.bands == once.bands
    assert twice == once
