import numpy as np
import pytest

from lbcnn.errors import FormatError
from lbcnn.pgm import read_pgm, write_pgm


def test_roundtrip(tmp_path, rng):
    img = rng.integers(0, 256, size=(7, 11)).astype(np.uint8)
    write_pgm(tmp_path / "a.pgm", img)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n11 7\n255\n") and len(raw) == 12 + 77
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)


def test_write_rounds_and_clamps(tmp_path):
    write_pgm(tmp_path / "b.pgm", np.array([[-3.0, 0.4, 0.6, 254.5, 300.0]]))
    np.testing.assert_array_equal(read_pgm(tmp_path / "b.pgm"), [[0, 0, 1, 254, 255]])


def test_header_comments_and_whitespace(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5 # a comment\n2\t# w\n 1\n200\n\x05\xc8")
    np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), [[5, 200]])


@pytest.mark.parametrize("blob", [b"P2\n1 1\n255\n0", b"P5\n2 2\n255\n\x00", b"P5\n1 1\n65535\n\x00\x00",
                                  b"P5\n0 1\n255\n", b"P5\nx 1\n255\n\x00", b"P5\n1"])
def test_rejects_bad_files(tmp_path, blob):
    (tmp_path / "d.pgm").write_bytes(blob)
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "d.pgm")


def test_write_needs_2d(tmp_path):
    with pytest.raises(FormatError):
        write_pgm(tmp_path / "e.pgm", np.zeros((2, 2, 2)))
