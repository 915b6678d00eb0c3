"""Convert the 10 000-digit MNIST subset shipped in the npm ``mnist`` package to IDX.

Usage::

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/build_mnist_subset.py package/src/digits data/

The JSON files hold intensities already divided by 255 and rounded to three
decimals; multiplying back by 255 and rounding recovers the original bytes.
Samples are interleaved with a fixed permutation so any prefix is class-mixed.
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np


def main(src, dst):
    src, dst = Path(src), Path(dst)
    images, labels = [], []
    for digit in range(10):
        data = np.asarray(json.loads((src / f"{digit}.json").read_text())["data"])
        data = data.reshape(-1, 28, 28)
        images.append(np.rint(data * 255).astype(np.uint8))
        labels.append(np.full(len(data), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(0).permutation(len(images))
    images, labels = images[order], labels[order]

    dst.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(dst / "mnist10k-images-idx3-ubyte.gz", "wb", mtime=0) as fh:
        fh.write(struct.pack(">IIII", 0x803, *images.shape))
        fh.write(images.tobytes())
    with gzip.GzipFile(dst / "mnist10k-labels-idx1-ubyte.gz", "wb", mtime=0) as fh:
        fh.write(struct.pack(">II", 0x801, len(labels)))
        fh.write(labels.tobytes())
    print(f"wrote {len(images)} images to {dst}")


if __name__ == "__main__":
    main(*sys.argv[1:3])
