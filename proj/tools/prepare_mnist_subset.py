#!/usr/bin/env python3
"""Build the desk-scale MNIST split as IDX files.

The source is the 5000-digit MNIST sample (500 per class) that ships inside
the mlxtend wheel as ``mlxtend/data/data/mnist_5k.csv.gz``.  The wheel is
fetched with ``pip download`` unless ``--wheel`` or ``--csv`` points at a
local copy.  Output is a stratified, seeded split written in the standard
IDX layout so the C++ loader reads it exactly like the full dataset:

    train-images-idx3-ubyte  train-labels-idx1-ubyte   (default 4000 items)
    t10k-images-idx3-ubyte   t10k-labels-idx1-ubyte    (default 1000 items)
"""

import argparse
import glob
import gzip
import io
import os
import random
import struct
import subprocess
import sys
import tempfile
import zipfile

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_rows(args):
    if args.csv:
        with gzip.open(args.csv, "rt") as fh:
            return fh.read().splitlines()
    wheel = args.wheel
    if wheel is None:
        tmp = tempfile.mkdtemp()
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps",
                        "-d", tmp, "mlxtend"], check=True)
        wheel = glob.glob(os.path.join(tmp, "mlxtend-*.whl"))[0]
    with zipfile.ZipFile(wheel) as zf:
        raw = gzip.decompress(zf.read(CSV_MEMBER))
    return raw.decode().splitlines()


def write_idx(out_dir, stem, items):
    images = bytearray()
    labels = bytearray()
    for pixels, label in items:
        images.extend(pixels)
        labels.append(label)
    with open(os.path.join(out_dir, stem + "-images-idx3-ubyte"), "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, len(items), 28, 28))
        fh.write(images)
    with open(os.path.join(out_dir, stem + "-labels-idx1-ubyte"), "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, len(items)))
        fh.write(labels)


def main():
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", default="data/mnist")
    parser.add_argument("--wheel")
    parser.add_argument("--csv")
    parser.add_argument("--test-per-class", type=int, default=100)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    by_class = {c: [] for c in range(10)}
    for line in read_rows(args):
        fields = [int(v) for v in line.split(",")]
        pixels, label = bytes(fields[:-1]), fields[-1]
        if len(pixels) != 784 or not 0 <= label <= 9:
            sys.exit("malformed row in source csv")
        by_class[label].append((pixels, label))

    rng = random.Random(args.seed)
    train, test = [], []
    for c in range(10):
        rows = by_class[c]
        rng.shuffle(rows)
        test.extend(rows[:args.test_per_class])
        train.extend(rows[args.test_per_class:])
    rng.shuffle(train)
    rng.shuffle(test)

    os.makedirs(args.out, exist_ok=True)
    write_idx(args.out, "train", train)
    write_idx(args.out, "t10k", test)
    print(f"wrote {len(train)} train / {len(test)} test items to {args.out}")


if __name__ == "__main__":
    main()
