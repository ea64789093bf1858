"""Rebuild the bundled 5000-digit MNIST sample as an IDX image/label pair.

The source is ``mnist_5k.csv.gz`` shipped inside the mlxtend wheel (500 images
per digit, 28x28 grey levels 0..255, label in the last column).  Pass either
the wheel or the extracted CSV.
"""

import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np

from byzadmm.data import Dataset, write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_source(path: Path) -> np.ndarray:
    if path.suffix == ".whl":
        with zipfile.ZipFile(path) as zf:
            blob = zf.read(MEMBER)
    else:
        blob = path.read_bytes()
    text = gzip.decompress(blob).decode("ascii") if blob[:2] == b"\x1f\x8b" else blob.decode("ascii")
    return np.loadtxt(io.StringIO(text), delimiter=",", dtype=np.int64)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("source", type=Path, help="mlxtend wheel or mnist_5k.csv(.gz)")
    parser.add_argument("--out", type=Path, default=Path("data/mnist5k"))
    args = parser.parse_args()

    table = read_source(args.source)
    ds = Dataset(table[:, :-1] / 255.0, table[:, -1], 10)
    images, labels = write_idx(ds, (28, 28))
    args.out.mkdir(parents=True, exist_ok=True)
    # mtime=0 keeps the gzip bytes reproducible
    (args.out / "train-images-idx3-ubyte.gz").write_bytes(gzip.compress(images, mtime=0))
    (args.out / "train-labels-idx1-ubyte.gz").write_bytes(gzip.compress(labels, mtime=0))
    print(f"wrote {len(ds)} images to {args.out}")


if __name__ == "__main__":
    main()
