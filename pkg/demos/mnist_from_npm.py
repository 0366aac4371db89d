"""Build MNIST-style IDX files from the digits bundled in the npm ``mnist`` package.

The package ships 10,000 MNIST digits as JSON (one file per class, pixel
values in [0, 1] rounded to three decimals).  This script rescales them to
uint8, shuffles with a fixed seed and writes a train/test IDX pair.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 demos/mnist_from_npm.py package/src/digits data/mnist --test 2000
"""
import argparse
import json
import os

import numpy as np

from gbnn.data import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, write_idx


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--test", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = [], []
    for d in range(10):
        with open(os.path.join(args.digits_dir, f"{d}.json")) as fh:
            flat = np.asarray(json.load(fh)["data"])
        block = np.rint(flat.reshape(-1, 28, 28) * 255).astype(np.uint8)
        images.append(block)
        labels.append(np.full(len(block), d, dtype=np.uint8))
    images, labels = np.concatenate(images), np.concatenate(labels)
    perm = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[perm], labels[perm]

    os.makedirs(args.out_dir, exist_ok=True)
    n_test = args.test
    parts = {"train": slice(n_test, None), "t10k": slice(0, n_test)}
    for name, sl in parts.items():
        write_idx(os.path.join(args.out_dir, f"{name}-images-idx3-ubyte"), images[sl],
                  IDX_IMAGES_MAGIC)
        write_idx(os.path.join(args.out_dir, f"{name}-labels-idx1-ubyte"), labels[sl],
                  IDX_LABELS_MAGIC)
    print(f"wrote {len(labels) - n_test} train / {n_test} test images to {args.out_dir}")


if __name__ == "__main__":
    main()
