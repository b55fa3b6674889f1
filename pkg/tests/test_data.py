import gzip
import os
import struct

import numpy as np
import pytest

from lbcnn.data import (BUNDLED_MNIST, load_mnist_idx, load_mnist_split, subsample, synthetic_gaussian,
                        synthetic_natural, train_test_split, write_idx)
from lbcnn.errors import DataError, FormatError, ParameterError


def fabricate(tmp_path, pixels, labels, gz=False):
    ext = ".gz" if gz else ""
    img, lab = tmp_path / f"img{ext}", tmp_path / f"lab{ext}"
    write_idx(img, lab, pixels, labels)
    return img, lab


def test_idx_position_exact(tmp_path, rng):
    pixels = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    img, lab = fabricate(tmp_path, pixels, [0, 1, 2, 3, 9])
    raw = img.read_bytes()
    assert struct.unpack(">IIII", raw[:16]) == (2051, 5, 28, 28)
    ds = load_mnist_idx(img, lab, pad_to=None)
    for k in range(5):
        want = np.frombuffer(raw[16 + k * 784:16 + (k + 1) * 784], dtype=np.uint8).reshape(28, 28) / 255.0
        np.testing.assert_array_equal(ds.images[k, 0], want)
    np.testing.assert_array_equal(ds.labels, [0, 1, 2, 3, 9])


def test_padding_to_32(tmp_path, rng):
    pixels = rng.integers(1, 256, size=(2, 28, 28), dtype=np.uint8)
    ds = load_mnist_idx(*fabricate(tmp_path, pixels, [4, 5], gz=True))
    assert ds.images.shape == (2, 1, 32, 32)
    np.testing.assert_array_equal(ds.images[:, 0, 2:30, 2:30], pixels / 255.0)
    assert ds.images[:, :, :2].sum() == 0 and ds.images[:, :, :, 30:].sum() == 0
    assert 0.0 <= ds.images.min() and ds.images.max() <= 1.0


def test_all_zero_record(tmp_path):
    ds = load_mnist_idx(*fabricate(tmp_path, np.zeros((1, 28, 28), np.uint8), [0]))
    assert not ds.images.any()


def test_label_out_of_range(tmp_path):
    with pytest.raises(DataError):
        load_mnist_idx(*fabricate(tmp_path, np.zeros((1, 28, 28), np.uint8), [10]))


def test_bad_magic_and_truncation(tmp_path):
    img, lab = fabricate(tmp_path, np.zeros((2, 28, 28), np.uint8), [1, 2])
    raw = img.read_bytes()
    img.write_bytes(struct.pack(">I", 2049) + raw[4:])
    with pytest.raises(FormatError):
        load_mnist_idx(img, lab)
    img.write_bytes(raw[:-5])
    with pytest.raises(FormatError):
        load_mnist_idx(img, lab)
    img.write_bytes(raw)
    lab.write_bytes(struct.pack(">II", 2051, 2) + b"\x01\x02")
    with pytest.raises(FormatError):
        load_mnist_idx(img, lab)


def test_count_mismatch(tmp_path):
    img, _ = fabricate(tmp_path, np.zeros((2, 28, 28), np.uint8), [1, 2])
    lab = tmp_path / "lab3"
    write_idx(tmp_path / "ignored", lab, np.zeros((3, 28, 28), np.uint8), [1, 2, 3])
    with pytest.raises(DataError):
        load_mnist_idx(img, lab)


def test_gzip_detected_by_content(tmp_path):
    img, lab = fabricate(tmp_path, np.full((1, 28, 28), 255, np.uint8), [7], gz=True)
    assert gzip.decompress(img.read_bytes())[:4] == struct.pack(">I", 2051)
    assert load_mnist_idx(img, lab).images.max() == 1.0


def test_bundled_sample():
    ds = load_mnist_idx(BUNDLED_MNIST / "images-idx3-ubyte.gz", BUNDLED_MNIST / "labels-idx1-ubyte.gz")
    assert len(ds) == 5000 and ds.images.shape[1:] == (1, 32, 32)
    np.testing.assert_array_equal(np.bincount(ds.labels), np.full(10, 500))
    tr, te = load_mnist_split(2000, 1000, seed=0)
    assert len(tr) == 2000 and len(te) == 1000


@pytest.mark.skipif(not os.environ.get("LBCNN_MNIST_DIR"), reason="official MNIST files not available")
def test_official_train_file_count():
    d = os.environ["LBCNN_MNIST_DIR"]
    ds = load_mnist_idx(os.path.join(d, "train-images-idx3-ubyte.gz"), os.path.join(d, "train-labels-idx1-ubyte.gz"))
    assert len(ds) == 60000 and ds.n_classes == 10


def test_synthetic_gaussian():
    a, b = synthetic_gaussian(50, 1, 8, 8, seed=3), synthetic_gaussian(50, 1, 8, 8, seed=3)
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.labels, b.labels)
    big = synthetic_gaussian(1000, 1, 10, 10, seed=0)
    assert -0.02 < big.images.mean() < 0.02
    assert len(np.unique(big.labels)) == 10
    with pytest.raises(ParameterError):
        synthetic_gaussian(0)


def test_synthetic_natural_range():
    ds = synthetic_natural(4, 3, 16, 16, seed=1)
    assert ds.images.shape == (4, 3, 16, 16)
    assert ds.images.min() == 0.0 and ds.images.max() == 1.0


def test_subsample_per_class():
    labels = np.repeat(np.arange(10), 5000)
    from lbcnn.data import Dataset

    ds = Dataset(np.zeros((50000, 1, 1, 1)), labels)
    sub = subsample(ds, 0.25, per_class=True, seed=0)
    np.testing.assert_array_equal(np.bincount(sub.labels), np.full(10, 1250))
    full = subsample(ds.take(np.arange(100)), 1.0, seed=0)
    assert len(full) == 100
    with pytest.raises(ParameterError):
        subsample(ds, 1e-9)
    with pytest.raises(ParameterError):
        subsample(ds, 0.0)


def test_subsample_preserves_balance_on_real_digits():
    tr, _ = load_mnist_split(2000, 1000, seed=0)
    sub = subsample(tr, 0.5, seed=2)
    np.testing.assert_array_equal(np.bincount(sub.labels, minlength=10),
                                  np.floor(0.5 * np.bincount(tr.labels, minlength=10) + 1e-9).astype(int))


def test_split_disjoint():
    ds = synthetic_gaussian(30, 1, 2, 2, seed=0)
    a, b = train_test_split(ds, 20, 10, seed=1)
    rows = {tuple(r) for r in a.images.reshape(20, -1)} & {tuple(r) for r in b.images.reshape(10, -1)}
    assert not rows
    with pytest.raises(ParameterError):
        train_test_split(ds, 25, 10)
