"""Write the 5000-digit MNIST subset shipped with mlxtend as IDX files.

Usage: python scripts/prepare_mnist.py [--out data/mnist5k] [--test 1000] [--seed 0]

Produces train-{images-idx3,labels-idx1}-ubyte.gz and the t10k-* pair, using
a seeded shuffle so both splits hold every digit class.
"""
import argparse
from pathlib import Path

import numpy as np

from imle_lab.data import MnistSet, save_mnist


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/mnist5k")
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    from mlxtend.data import mnist_data  # optional dependency, only needed here

    x, y = mnist_data()
    order = np.random.default_rng(args.seed).permutation(len(x))
    images = x[order].reshape(-1, 28, 28).astype(np.uint8)
    labels = y[order].astype(np.uint8)
    out = Path(args.out)
    n_test = args.test
    save_mnist(out / "train", MnistSet(images[n_test:], labels[n_test:]))
    save_mnist(out / "t10k", MnistSet(images[:n_test], labels[:n_test]))
    print(f"wrote {len(images) - n_test} train / {n_test} test digits to {out}")


if __name__ == "__main__":
    main()
