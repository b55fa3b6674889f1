"""Datasets: MNIST IDX files, synthetic generators and subsampling."""

import gzip
import os
import struct
from pathlib import Path
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError, ParameterError

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


@dataclass
class Dataset:
    images: np.ndarray  # (n, c, H, W) float64
    labels: np.ndarray  # (n,) int64
    name: str = ""
    n_classes: int = 10

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.labels)

    def take(self, idx, name=None):
        idx = np.asarray(idx)
        return Dataset(self.images[idx], self.labels[idx], name or self.name, self.n_classes)


def _read(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx_images(raw):
    if len(raw) < 16:
        raise FormatError("image file shorter than its header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"bad image magic {magic}, expected {IDX_IMAGES_MAGIC}")
    if len(raw) != 16 + n * rows * cols:
        raise FormatError(f"image file has {len(raw) - 16} pixel bytes, header says {n * rows * cols}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, rows, cols)


def _parse_idx_labels(raw):
    if len(raw) < 8:
        raise FormatError("label file shorter than its header")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"bad label magic {magic}, expected {IDX_LABELS_MAGIC}")
    if len(raw) != 8 + n:
        raise FormatError(f"label file has {len(raw) - 8} label bytes, header says {n}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8)


def load_mnist_idx(images_path, labels_path, pad_to=32, n_classes=10):
    """Load an IDX image/label pair (optionally gzipped).

    Pixels are scaled by 1/255 and each image is zero-padded, centred, to
    ``pad_to`` x ``pad_to`` (pass ``pad_to=None`` to keep the stored size).
    """
    pixels = _parse_idx_images(_read(images_path))
    labels = _parse_idx_labels(_read(labels_path))
    if len(pixels) != len(labels):
        raise DataError(f"{len(pixels)} images but {len(labels)} labels")
    if len(labels) and labels.max() >= n_classes:
        raise DataError(f"label {labels.max()} outside [0, {n_classes})")
    n, rows, cols = pixels.shape
    images = pixels.astype(np.float64) / 255.0
    if pad_to is not None:
        if pad_to < max(rows, cols):
            raise ParameterError(f"cannot pad {rows}x{cols} images to {pad_to}")
        top, left = (pad_to - rows) // 2, (pad_to - cols) // 2
        padded = np.zeros((n, pad_to, pad_to))
        padded[:, top:top + rows, left:left + cols] = images
        images = padded
    return Dataset(images[:, None], labels.astype(np.int64), name="mnist", n_classes=n_classes)


def write_idx(images_path, labels_path, pixels, labels, compress=None):
    """Write uint8 ``pixels`` (n, rows, cols) and ``labels`` (n,) as IDX files."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = pixels.shape
    img = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + pixels.tobytes()
    lab = struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes()
    for path, blob in ((images_path, img), (labels_path, lab)):
        gz = str(path).endswith(".gz") if compress is None else compress
        with open(path, "wb") as fh:
            fh.write(gzip.compress(blob, mtime=0) if gz else blob)


TEACHER_SEED = 20170401


def synthetic_gaussian(n, p=1, H=16, W=16, seed=0, n_classes=10):
    """I.i.d. standard normal images labelled by a fixed linear teacher.

    The teacher is a (n_classes, p*H*W) standard normal matrix drawn from
    ``TEACHER_SEED`` (independent of ``seed``); an image's label is the argmax
    of the teacher applied to the flattened image.
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    rng = np.random.default_rng(seed)
    images = rng.standard_normal((n, p, H, W))
    teacher = np.random.default_rng(TEACHER_SEED).standard_normal((n_classes, p * H * W))
    labels = np.argmax(images.reshape(n, -1) @ teacher.T, axis=1)
    return Dataset(images, labels.astype(np.int64), name="synthetic", n_classes=n_classes)


def synthetic_natural(n, p=3, H=32, W=32, seed=0, smoothness=2.0):
    """Smooth, positive images in [0, 1] with natural-image-like spatial correlation.

    Each image is white noise blurred by a Gaussian of width ``smoothness``
    pixels plus a per-channel brightness offset, then min-max scaled to [0, 1].
    Used as a stand-in for small colour photographs; labels are all zero.
    """
    from scipy.ndimage import gaussian_filter

    if n < 1:
        raise ParameterError("n must be >= 1")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n, p, H, W))
    smooth = gaussian_filter(noise, sigma=(0, 0, smoothness, smoothness), mode="wrap")
    smooth /= smooth.std(axis=(1, 2, 3), keepdims=True)
    smooth += rng.standard_normal((n, p, 1, 1)) * 0.5 + rng.standard_normal((n, 1, 1, 1))
    lo = smooth.min(axis=(1, 2, 3), keepdims=True)
    hi = smooth.max(axis=(1, 2, 3), keepdims=True)
    images = (smooth - lo) / (hi - lo)
    return Dataset(images, np.zeros(n, dtype=np.int64), name="natural", n_classes=1)


def subsample(ds, fraction, per_class=True, seed=0):
    """Random subset without replacement.

    With ``per_class`` each class keeps floor(fraction * count) samples, so
    class proportions are preserved exactly.
    """
    if not 0.0 < fraction <= 1.0:
        raise ParameterError(f"fraction must be in (0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    if per_class:
        picks = []
        for c in np.unique(ds.labels):
            idx = np.flatnonzero(ds.labels == c)
            k = int(np.floor(fraction * len(idx) + 1e-9))
            if k == 0:
                raise ParameterError(f"fraction {fraction} leaves class {c} empty")
            picks.append(rng.choice(idx, size=k, replace=False))
        idx = np.sort(np.concatenate(picks))
    else:
        k = int(np.floor(fraction * len(ds) + 1e-9))
        if k == 0:
            raise ParameterError(f"fraction {fraction} leaves no samples")
        idx = np.sort(rng.choice(len(ds), size=k, replace=False))
    return ds.take(idx)


def train_test_split(ds, n_train, n_test, seed=0):
    """Disjoint random train/test subsets of the requested sizes."""
    if n_train + n_test > len(ds):
        raise ParameterError(f"asked for {n_train}+{n_test} samples from {len(ds)}")
    order = np.random.default_rng(seed).permutation(len(ds))
    return ds.take(order[:n_train], ds.name + "-train"), ds.take(order[n_train:n_train + n_test], ds.name + "-test")


BUNDLED_MNIST = Path(__file__).parent / "_data" / "mnist5k"


def _find(data_dir, stem):
    for name in (stem, stem + ".gz"):
        path = Path(data_dir) / name
        if path.exists():
            return path
    return None


def load_mnist_split(n_train=2000, n_test=1000, seed=0, data_dir=None):
    """Train/test MNIST slices for desk-scale runs.

    If ``data_dir`` holds the official ``train-*``/``t10k-*`` IDX files, the
    slices are drawn from the respective official splits. Otherwise the
    directory (default: ``$LBCNN_MNIST_DIR`` if set, else the bundled
    5,000-digit sample) must hold a single ``images-idx3-ubyte`` /
    ``labels-idx1-ubyte`` pool, split disjointly.
    """
    if data_dir is None:
        data_dir = os.environ.get("LBCNN_MNIST_DIR") or BUNDLED_MNIST
    data_dir = Path(data_dir)
    rng = np.random.default_rng(seed)
    tr_img, tr_lab = _find(data_dir, "train-images-idx3-ubyte"), _find(data_dir, "train-labels-idx1-ubyte")
    te_img, te_lab = _find(data_dir, "t10k-images-idx3-ubyte"), _find(data_dir, "t10k-labels-idx1-ubyte")
    if tr_img and tr_lab and te_img and te_lab:
        train, test = load_mnist_idx(tr_img, tr_lab), load_mnist_idx(te_img, te_lab)
        if n_train > len(train) or n_test > len(test):
            raise ParameterError(f"asked for {n_train}/{n_test} samples from {len(train)}/{len(test)}")
        a = np.sort(rng.choice(len(train), n_train, replace=False))
        b = np.sort(rng.choice(len(test), n_test, replace=False))
        return train.take(a, "mnist-train"), test.take(b, "mnist-test")
    img, lab = _find(data_dir, "images-idx3-ubyte"), _find(data_dir, "labels-idx1-ubyte")
    if not (img and lab):
        raise DataError(f"no MNIST IDX files found in {data_dir}")
    return train_test_split(load_mnist_idx(img, lab), n_train, n_test, seed=seed)
