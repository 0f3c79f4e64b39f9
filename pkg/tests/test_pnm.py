import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from meal import pnm


@given(arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9))))
def test_graymap_roundtrip(arr):
    assert np.array_equal(pnm.decode(pnm.encode(arr)), arr)


@given(arrays(np.uint8, st.tuples(st.integers(1, 7), st.integers(1, 7), st.just(3))))
def test_pixmap_roundtrip(arr):
    assert np.array_equal(pnm.decode(pnm.encode(arr)), arr)


def test_header_layout():
    buf = pnm.encode(np.zeros((2, 3), dtype=np.uint8))
    assert buf.startswith(b"P5\n3 2\n255\n")
    assert len(buf) == len(b"P5\n3 2\n255\n") + 6


def test_comments_in_header_are_skipped():
    raster = bytes(range(6))
    arr = pnm.decode(b"P5\n# made by hand\n3 # width\n2\n255\n" + raster)
    assert arr.tolist() == [[0, 1, 2], [3, 4, 5]]


@pytest.mark.parametrize(
    "buf",
    [b"P3\n1 1\n255\n0 0 0", b"P5\n2 2\n65535\n" + bytes(8), b"P5\n4 4\n255\n" + bytes(3), b"P5\n"],
)
def test_rejects_bad_input(buf):
    with pytest.raises(pnm.PnmError):
        pnm.decode(buf)


def test_encode_rejects_wrong_dtype():
    with pytest.raises(pnm.PnmError):
        pnm.encode(np.zeros((2, 2), dtype=np.float64))


def test_file_roundtrip(tmp_path):
    arr = np.arange(24, dtype=np.uint8).reshape(2, 4, 3)
    pnm.write(tmp_path / "a.ppm", arr)
    assert np.array_equal(pnm.read(tmp_path / "a.ppm"), arr)
