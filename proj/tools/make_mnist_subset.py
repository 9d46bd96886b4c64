#!/usr/bin/env python3
"""Build the MNIST IDX subset shipped under data/mnist/.

Source: the `mnist` npm package (MIT, https://github.com/cazala/mnist), which
bundles 10,000 MNIST digits as JSON arrays of pixel intensities in [0, 1].

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist

Examples are taken round-robin over the digits (0, 1, ..., 9, 0, 1, ...), so
both splits are exactly class balanced. The first `--train` examples form the
training split and the next `--test` form the test split.
"""

import argparse
import json
import pathlib
import struct


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--train", type=int, default=2000)
    ap.add_argument("--test", type=int, default=1000)
    args = ap.parse_args()

    per_digit = []
    for d in range(10):
        flat = json.loads((pathlib.Path(args.digits_dir) / f"{d}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        per_digit.append([flat[i:i + 784] for i in range(0, len(flat), 784)])

    total = args.train + args.test
    images, labels = [], []
    for k in range(total):
        d, j = k % 10, k // 10
        images.append([min(255, max(0, round(v * 255))) for v in per_digit[d][j]])
        labels.append(d)

    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "train-images-idx3-ubyte", images[:args.train])
    write_labels(out / "train-labels-idx1-ubyte", labels[:args.train])
    write_images(out / "test-images-idx3-ubyte", images[args.train:])
    write_labels(out / "test-labels-idx1-ubyte", labels[args.train:])


if __name__ == "__main__":
    main()
