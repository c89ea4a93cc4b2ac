#!/usr/bin/env python3
"""Convert the digits bundled in the npm `mnist` package into IDX files.

The package ships 1001 MNIST digits per class as JSON arrays of byte/255
values rounded to three decimals. Rounding back to the nearest byte recovers
the original pixels exactly. The first TRAIN_PER_CLASS digits of each class
go to the train pair, the next TEST_PER_CLASS to the test pair; rows are
interleaved round-robin over classes.

usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/mnist_npm_to_idx.py package/src/digits data/mnist-subset
"""
import json
import struct
import sys
from pathlib import Path

TRAIN_PER_CLASS = 600
TEST_PER_CLASS = 200
PIXELS = 28 * 28


def load_class(path):
    flat = json.loads(path.read_text())["data"]
    assert len(flat) % PIXELS == 0
    images = []
    for k in range(len(flat) // PIXELS):
        raw = flat[k * PIXELS:(k + 1) * PIXELS]
        px = [round(v * 255) for v in raw]
        assert all(abs(b / 255 - v) < 6e-4 for b, v in zip(px, raw))
        images.append(bytes(px))
    return images


def write_pair(out_dir, prefix, rows):
    with open(out_dir / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(rows), 28, 28))
        for img, _ in rows:
            f.write(img)
    with open(out_dir / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(rows)))
        f.write(bytes(label for _, label in rows))


def interleave(per_class, lo, hi):
    return [(per_class[c][k], c) for k in range(lo, hi) for c in range(10)]


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    per_class = [load_class(src / f"{c}.json") for c in range(10)]
    assert all(len(v) >= TRAIN_PER_CLASS + TEST_PER_CLASS for v in per_class)
    write_pair(out, "train", interleave(per_class, 0, TRAIN_PER_CLASS))
    write_pair(out, "test", interleave(per_class, TRAIN_PER_CLASS, TRAIN_PER_CLASS + TEST_PER_CLASS))


if __name__ == "__main__":
    main()
