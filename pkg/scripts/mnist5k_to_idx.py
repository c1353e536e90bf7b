"""Convert the 5000-digit MNIST sample shipped inside the mlxtend wheel to IDX files.

    pip download --no-deps mlxtend -d /tmp/mlx
    python scripts/mnist5k_to_idx.py /tmp/mlx/mlxtend-*.whl tests/data/mnist5k

The CSV is sorted by label, so rows are shuffled with a fixed seed before the
first 4000 become the ``train`` split and the last 1000 the ``t10k`` split.
"""
import argparse
import gzip
import io
import zipfile

import numpy as np

from kwarehouse.train.data import write_idx_dataset

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("wheel")
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    with zipfile.ZipFile(args.wheel) as zf:
        raw = gzip.decompress(zf.read(MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    table = table[np.random.default_rng(args.seed).permutation(len(table))]
    images = table[:, :-1].reshape(-1, 28, 28).astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)
    write_idx_dataset(args.out_dir, images[:4000], labels[:4000], "train")
    write_idx_dataset(args.out_dir, images[4000:], labels[4000:], "test")


if __name__ == "__main__":
    main()
