"""Normalized-difference spectral indices."""

from __future__ import annotations

import numpy as np

from gsnorm.cube import TimeSeriesCube

INDEX_BANDS = ("NDWI", "LSWI", "NDVI")
_EPS = 1e-12


def normalized_difference(a, b):
    """(a - b) / (a + b), NaN where the denominator vanishes or an input is NaN."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    den = a + b
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(np.abs(den) < _EPS, np.nan, (a - b) / np.where(den == 0, 1.0, den))
    return out[()] if out.ndim == 0 else out


def ndwi(green, swir1):
    return normalized_difference(green, swir1)


def lswi(nir, swir1):
    return normalized_difference(nir, swir1)


def ndvi(nir, red):
    return normalized_difference(nir, red)


def add_index_bands(cube: TimeSeriesCube) -> TimeSeriesCube:
    """Return a cube with NDWI, LSWI and NDVI computed from the reflectance bands.

    Index bands already present are overwritten in place; missing ones are appended.
    """
    try:
        green, red, nir, swir1 = (cube.band(b) for b in ("GREEN", "RED", "NIR", "SWIR1"))
    except KeyError as exc:
        raise KeyError(f"cannot compute indices: {exc.args[0]}") from None
    values = {
        "NDWI": ndwi(green, swir1),
        "LSWI": lswi(nir, swir1),
        "NDVI": ndvi(nir, red),
    }
    bands = list(cube.bands)
    planes = list(cube.data)
    for name in INDEX_BANDS:
        plane = values[name].astype(np.float32)
        if name in bands:
            planes[bands.index(name)] = plane
        else:
            bands.append(name)
            planes.append(plane)
    return cube.with_data(np.stack(planes), bands)
