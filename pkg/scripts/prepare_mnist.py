#!/usr/bin/env python3
"""Write the 5000-digit MNIST subset bundled with mlxtend as IDX files.

    pip install mlxtend
    python scripts/prepare_mnist.py fixtures/mnist5k

Produces train-* (4000 digits) and t10k-* (1000 digits) gzip IDX pairs. The
class-sorted source is shuffled with a fixed seed before splitting. Any real
MNIST folder in the same layout can be used instead.
"""
import argparse
import os
from pathlib import Path

import numpy as np

from pvf.io.idx import write_idx

SHUFFLE_SEED = 20240501


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out", type=Path)
    ap.add_argument("--test", type=int, default=1000, help="digits held out as t10k")
    args = ap.parse_args()

    try:
        import mlxtend
    except ImportError:
        raise SystemExit("mlxtend is needed for the bundled MNIST subset: pip install mlxtend")
    src = os.path.join(os.path.dirname(mlxtend.__file__), "data", "data", "mnist_5k.csv.gz")
    table = np.loadtxt(src, delimiter=",", dtype=np.int64)
    images, labels = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28), table[:, -1].astype(np.uint8)
    order = np.random.default_rng(SHUFFLE_SEED).permutation(len(labels))
    images, labels = images[order], labels[order]

    args.out.mkdir(parents=True, exist_ok=True)
    cut = len(labels) - args.test
    for prefix, sl in (("train", slice(0, cut)), ("t10k", slice(cut, None))):
        write_idx(args.out / f"{prefix}-images-idx3-ubyte.gz", images[sl])
        write_idx(args.out / f"{prefix}-labels-idx1-ubyte.gz", labels[sl])
        print(f"{prefix}: {len(labels[sl])} digits")


if __name__ == "__main__":
    main()
