#!/usr/bin/env python3
"""Build gzipped IDX files from the digit bundle shipped in the npm `mnist` package.

The package (MIT licensed) carries 10000 MNIST digits as JSON arrays of
28x28 intensities in [0,1] rounded to three decimals. This script rescales
them to bytes, shuffles with a fixed seed and writes an 8000/2000 split in
the standard IDX layout:

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist-subset
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_idx(path, images, labels_path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as out:
        out.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            out.write(bytes(img))
    with gzip.GzipFile(labels_path, "wb", mtime=0) as out:
        out.write(struct.pack(">II", 0x00000801, len(labels)))
        out.write(bytes(labels))


def main():
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    samples = []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        for i in range(len(flat) // 784):
            px = [min(255, max(0, round(v * 255))) for v in flat[i * 784:(i + 1) * 784]]
            samples.append((px, digit))
    random.Random(20210611).shuffle(samples)
    train, test = samples[:8000], samples[8000:]
    dst.mkdir(parents=True, exist_ok=True)
    write_idx(dst / "train-images-idx3-ubyte.gz", [s[0] for s in train],
              dst / "train-labels-idx1-ubyte.gz", [s[1] for s in train])
    write_idx(dst / "t10k-images-idx3-ubyte.gz", [s[0] for s in test],
              dst / "t10k-labels-idx1-ubyte.gz", [s[1] for s in test])
    print(f"wrote {len(train)} train / {len(test)} test digits to {dst}")


if __name__ == "__main__":
    main()
