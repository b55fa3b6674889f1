"""Write the 5,000-digit MNIST sample shipped with mlxtend as gzipped IDX files.

The sample (500 digits per class, 28x28, uint8) lives in the mlxtend wheel at
``mlxtend/data/data/mnist_5k.csv.gz``; each CSV row is 784 pixels followed by
the label. Usage::

    pip download --no-deps mlxtend -d /tmp/wheels
    python scripts/make_mnist_subset.py /tmp/wheels/mlxtend-*.whl src/lbcnn/_data/mnist5k
"""

import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np

from lbcnn.data import write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_csv(source):
    source = Path(source)
    if source.suffix == ".whl":
        with zipfile.ZipFile(source) as zf:
            blob = zf.read(MEMBER)
    else:
        blob = source.read_bytes()
    rows = np.loadtxt(io.BytesIO(gzip.decompress(blob)), delimiter=",", dtype=np.int64)
    return rows[:, :-1].reshape(-1, 28, 28), rows[:, -1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source", help="mlxtend wheel or the extracted mnist_5k.csv.gz")
    ap.add_argument("out_dir")
    args = ap.parse_args()
    pixels, labels = read_csv(args.source)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "images-idx3-ubyte.gz", out / "labels-idx1-ubyte.gz", pixels, labels)
    print(f"wrote {len(labels)} images to {out}")


if __name__ == "__main__":
    main()
