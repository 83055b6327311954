import io
import struct

import numpy as np
import pytest

from gsnorm.cube import (
    FormatError,
    LabelRaster,
    TimeSeriesCube,
    TruncatedError,
    load_cube,
    read_cube,
    read_labels,
    save_cube,
    write_cube,
    write_labels,
)
from conftest import bits, random_cube


def roundtrip_cube(cube):
    buf = io.BytesIO()
    n = write_cube(cube, buf)
    assert n == len(buf.getvalue())
    return read_cube(io.BytesIO(buf.getvalue())), buf.getvalue()


def test_smallest_cube_is_header_plus_four_payload_bytes():
    cube = TimeSeriesCube(["NIR"], [180], 2019, np.full((1, 1, 1, 1), 0.5, np.float32))
    back, raw = roundtrip_cube(cube)
    header = 4 + 2 + 2 + 4 + 4 + 4 + 2 + 2 + (2 + 3)
    assert len(raw) == header + 4
    assert raw[-4:] == struct.pack("<f", 0.5)
    assert back == cube


def test_header_layout_is_little_endian():
    cube = TimeSeriesCube(["A", "BB"], [10, 20], 2017, np.zeros((2, 2, 3, 4), np.float32))
    _, raw = roundtrip_cube(cube)
    assert raw[:4] == b"GSNC"
    assert struct.unpack_from("<HHIIIH", raw, 4) == (1, 2, 3, 4, 2, 2017)
    assert struct.unpack_from("<HH", raw, 22) == (10, 20)
    assert raw[26:29] == b"\x01\x00A"


def test_nan_pixel_survives_with_canonical_bits():
    data = np.ones((1, 2, 2, 2), np.float32)
    data[0, 1, 0, 1] = np.nan
    back, raw = roundtrip_cube(TimeSeriesCube(["X"], [1, 2], 2018, data))
    assert np.isnan(back.data[0, 1, 0, 1])
    assert bits(back.data)[0, 1, 0, 1] == 0x7FC00000
    assert struct.pack("<I", 0x7FC00000) in raw


def test_negative_nan_is_canonicalized():
    data = np.array([-np.nan], np.float32).reshape(1, 1, 1, 1)
    assert bits(data)[0, 0, 0, 0] != 0x7FC00000
    cube = TimeSeriesCube(["X"], [5], 2018, data)
    assert bits(cube.data)[0, 0, 0, 0] == 0x7FC00000


def test_random_cube_roundtrip(rng):
    cube = random_cube(rng, bands=3, T=5, R=8, C=8, nan_frac=0.1)
    back, _ = roundtrip_cube(cube)
    assert back.bands == cube.bands and back.year == cube.year
    np.testing.assert_array_equal(back.doys, cube.doys)
    np.testing.assert_array_equal(bits(back.data), bits(cube.data))


def test_write_is_deterministic(rng):
    cube = random_cube(rng)
    assert roundtrip_cube(cube)[1] == roundtrip_cube(cube)[1]


def test_bad_magic_names_expected():
    _, raw = roundtrip_cube(TimeSeriesCube(["X"], [5], 2018, np.zeros((1, 1, 1, 1))))
    with pytest.raises(FormatError, match="GSNC"):
        read_cube(io.BytesIO(b"XXXX" + raw[4:]))


def test_version_mismatch():
    _, raw = roundtrip_cube(TimeSeriesCube(["X"], [5], 2018, np.zeros((1, 1, 1, 1))))
    with pytest.raises(FormatError, match="version"):
        read_cube(io.BytesIO(raw[:4] + struct.pack("<H", 2) + raw[6:]))


def test_truncated_payload_reports_lengths():
    _, raw = roundtrip_cube(TimeSeriesCube(["X"], [5], 2018, np.zeros((1, 1, 2, 2))))
    with pytest.raises(TruncatedError, match="expected 16 bytes, got 13"):
        read_cube(io.BytesIO(raw[:-3]))


def test_every_truncation_is_rejected(rng):
    _, raw = roundtrip_cube(random_cube(rng, bands=2, T=2, R=2, C=2))
    for cut in range(len(raw)):
        with pytest.raises(FormatError):
            read_cube(io.BytesIO(raw[:cut]))


def test_trailing_bytes_rejected():
    _, raw = roundtrip_cube(TimeSeriesCube(["X"], [5], 2018, np.zeros((1, 1, 1, 1))))
    with pytest.raises(FormatError):
        read_cube(io.BytesIO(raw + b"\0"))


def test_non_increasing_doys_rejected_on_read():
    _, raw = roundtrip_cube(TimeSeriesCube(["X"], [5, 9], 2018, np.zeros((1, 2, 1, 1))))
    doctored = bytearray(raw)
    struct.pack_into("<H", doctored, 24, 5)
    with pytest.raises(FormatError, match="increasing"):
        read_cube(io.BytesIO(bytes(doctored)))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(bands=["A", "A"], doys=[1], data=np.zeros((2, 1, 1, 1))),
        dict(bands=["A"], doys=[3, 2], data=np.zeros((1, 2, 1, 1))),
        dict(bands=["A"], doys=[0], data=np.zeros((1, 1, 1, 1))),
        dict(bands=["A"], doys=[1, 2], data=np.zeros((1, 1, 1, 1))),
    ],
)
def test_cube_invariants(kwargs):
    with pytest.raises(ValueError):
        TimeSeriesCube(year=2018, **kwargs)


def test_band_lookup():
    cube = TimeSeriesCube(["A", "B"], [1], 2018, np.arange(2, dtype=np.float32).reshape(2, 1, 1, 1))
    assert cube.band("B")[0, 0, 0] == 1
    with pytest.raises(KeyError):
        cube.band("C")


def test_all_masked_labels_payload():
    buf = io.BytesIO()
    write_labels(LabelRaster(np.full((2, 2), 255, np.uint8), 2019), buf)
    raw = buf.getvalue()
    assert raw[:4] == b"GSNL" and struct.unpack_from("<HIIH", raw, 4) == (1, 2, 2, 2019)
    assert raw[-4:] == b"\xff" * 4 and len(raw) == 16 + 4


def test_label_value_seven_rejected_on_write_and_read():
    with pytest.raises(ValueError, match="7"):
        LabelRaster(np.array([[0, 7]]))
    buf = io.BytesIO()
    write_labels(LabelRaster(np.array([[0, 1]]), 2018), buf)
    raw = bytearray(buf.getvalue())
    raw[-1] = 7
    with pytest.raises(FormatError):
        read_labels(io.BytesIO(bytes(raw)))


def test_random_labels_roundtrip(rng):
    lab = LabelRaster(rng.choice([0, 1, 2, 255], size=(7, 9)).astype(np.uint8), 2017)
    buf = io.BytesIO()
    write_labels(lab, buf)
    assert read_labels(io.BytesIO(buf.getvalue())) == lab


def test_save_is_atomic_on_failure(tmp_path, rng, monkeypatch):
    path = tmp_path / "c.gsnc"
    cube = random_cube(rng)
    save_cube(cube, path)
    before = path.read_bytes()

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr("gsnorm.cube.write_cube", boom)
    from gsnorm import cube as cube_mod

    with pytest.raises(OSError):
        cube_mod.atomic_write(path, cube_mod.write_cube, cube)
    assert path.read_bytes() == before
    assert sorted(p.name for p in tmp_path.iterdir()) == ["c.gsnc"]
    assert load_cube(path) == cube
