#!/usr/bin/env python3
"""Convert the digits bundled in the `mnist` npm package into gzip IDX files.

The package stores 10,000 MNIST digits as one JSON file per class, with pixel
intensities divided by 255 and rounded to three decimals. Rounding back with
round(v * 255) recovers the original bytes exactly (the quantization error is
below 0.13 grey levels).

Every eighth sample of each class goes to the test split until that class has
110 test samples; the remainder is the training split. Output names follow the official MNIST file names.

usage: npm pack mnist && tar xzf mnist-1.1.0.tgz
       python3 scripts/npm_mnist_to_idx.py package/src/digits data/mnist
"""

import gzip
import json
import os
import struct
import sys

SIDE = 28
TEST_PER_CLASS = 110


def load_class(path):
    with open(path) as f:
        data = json.load(f)["data"]
    assert len(data) % (SIDE * SIDE) == 0, path
    pixels = bytes(int(round(v * 255.0)) for v in data)
    n = len(pixels) // (SIDE * SIDE)
    return [pixels[i * SIDE * SIDE:(i + 1) * SIDE * SIDE] for i in range(n)]


def interleave(per_class):
    """Round-robin across classes so the file is not sorted by label."""
    out = []
    cursors = [0] * 10
    while any(cursors[k] < len(per_class[k]) for k in range(10)):
        for k in range(10):
            if cursors[k] < len(per_class[k]):
                out.append((per_class[k][cursors[k]], k))
                cursors[k] += 1
    return out


def write(out_dir, prefix, samples):
    images = struct.pack(">IIII", 0x00000803, len(samples), SIDE, SIDE)
    images += b"".join(img for img, _ in samples)
    labels = struct.pack(">II", 0x00000801, len(samples))
    labels += bytes(label for _, label in samples)
    for name, payload in ((f"{prefix}-images-idx3-ubyte.gz", images),
                          (f"{prefix}-labels-idx1-ubyte.gz", labels)):
        # mtime=0 keeps the archive bytes reproducible
        with gzip.GzipFile(os.path.join(out_dir, name), "wb", mtime=0) as f:
            f.write(payload)


def main():
    src, out_dir = sys.argv[1], sys.argv[2]
    os.makedirs(out_dir, exist_ok=True)
    train, test = [[] for _ in range(10)], [[] for _ in range(10)]
    for k in range(10):
        for i, img in enumerate(load_class(os.path.join(src, f"{k}.json"))):
            to_test = i % 8 == 7 and len(test[k]) < TEST_PER_CLASS
            (test if to_test else train)[k].append(img)
    train_samples, test_samples = interleave(train), interleave(test)
    write(out_dir, "train", train_samples)
    write(out_dir, "t10k", test_samples)
    print(f"train: {len(train_samples)}  test: {len(test_samples)}")


if __name__ == "__main__":
    main()
