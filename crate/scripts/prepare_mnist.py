#!/usr/bin/env python3
"""Build gzipped MNIST IDX files from the digits bundled in the npm `mnist` package.

The package ships 10,000 MNIST digits as per-class JSON arrays of
rescaled pixels. They are quantised back to bytes and split per class
into a training pool (first 80%) and a test pool (remaining 20%), each
shuffled with a fixed seed, then written as standard IDX files:

    train-images-idx3-ubyte.gz  train-labels-idx1-ubyte.gz
    t10k-images-idx3-ubyte.gz   t10k-labels-idx1-ubyte.gz

Usage: scripts/prepare_mnist.py [OUT_DIR] [--package-dir DIR]
"""
import argparse
import gzip
import json
import os
import random
import struct
import subprocess
import tarfile
import tempfile

TRAIN_FRACTION = 0.8
SHUFFLE_SEED = 20200706


def fetch_package(workdir):
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True,
                   stdout=subprocess.DEVNULL)
    tgz = next(f for f in os.listdir(workdir) if f.endswith(".tgz"))
    with tarfile.open(os.path.join(workdir, tgz)) as tar:
        tar.extractall(workdir)
    return os.path.join(workdir, "package")


def load_digits(package_dir):
    digits = {}
    for d in range(10):
        path = os.path.join(package_dir, "src", "digits", f"{d}.json")
        with open(path) as f:
            flat = json.load(f)["data"]
        assert len(flat) % 784 == 0
        pixels = bytes(min(255, max(0, round(v * 255))) for v in flat)
        digits[d] = [pixels[i:i + 784] for i in range(0, len(pixels), 784)]
    return digits


def write_idx(out_dir, prefix, items):
    images = os.path.join(out_dir, f"{prefix}-images-idx3-ubyte.gz")
    labels = os.path.join(out_dir, f"{prefix}-labels-idx1-ubyte.gz")
    with gzip.GzipFile(images, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(items), 28, 28))
        for _, px in items:
            f.write(px)
    with gzip.GzipFile(labels, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(items)))
        f.write(bytes(label for label, _ in items))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir", nargs="?", default="data/mnist")
    ap.add_argument("--package-dir")
    args = ap.parse_args()
    os.makedirs(args.out_dir, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        package_dir = args.package_dir or fetch_package(tmp)
        digits = load_digits(package_dir)

    train, test = [], []
    for d, imgs in digits.items():
        cut = int(len(imgs) * TRAIN_FRACTION)
        train += [(d, px) for px in imgs[:cut]]
        test += [(d, px) for px in imgs[cut:]]
    rng = random.Random(SHUFFLE_SEED)
    rng.shuffle(train)
    rng.shuffle(test)
    write_idx(args.out_dir, "train", train)
    write_idx(args.out_dir, "t10k", test)
    print(f"wrote {len(train)} training and {len(test)} test digits to {args.out_dir}")


if __name__ == "__main__":
    main()
