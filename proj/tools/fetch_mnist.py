#!/usr/bin/env python3
"""Builds MNIST IDX files under data/mnist from the 10k digits shipped in the
`mnist` npm package.

Output: train-images-idx3-ubyte / train-labels-idx1-ubyte (about 8000 samples) and
t10k-images-idx3-ubyte / t10k-labels-idx1-ubyte (about 2000 samples). The split is
stratified and deterministic: within each digit, every fifth sample goes to
the test split.

Usage: fetch_mnist.py [OUT_DIR] [--tarball PATH] [--if-missing]
"""

import argparse
import json
import pathlib
import struct
import subprocess
import sys
import tarfile
import tempfile


def write_idx(out_dir, prefix, images, labels):
    n = len(labels)
    with open(out_dir / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(out_dir / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(labels))


def load_digits(tarball):
    digits = {}
    with tarfile.open(tarball) as tf:
        for d in range(10):
            member = tf.extractfile(f"package/src/digits/{d}.json")
            flat = json.load(member)["data"]
            if len(flat) % 784:
                raise ValueError(f"digit {d}: {len(flat)} values is not a multiple of 784")
            digits[d] = [
                [min(255, max(0, round(v * 255))) for v in flat[i : i + 784]]
                for i in range(0, len(flat), 784)
            ]
    return digits


def npm_pack(workdir):
    out = subprocess.run(
        ["npm", "pack", "mnist@1.1.0", "--silent"],
        cwd=workdir,
        check=True,
        capture_output=True,
        text=True,
    )
    return pathlib.Path(workdir) / out.stdout.strip().splitlines()[-1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out", nargs="?", default=str(pathlib.Path(__file__).resolve().parent.parent / "data" / "mnist"))
    ap.add_argument("--tarball")
    ap.add_argument("--if-missing", action="store_true", help="do nothing when all four files exist")
    args = ap.parse_args()
    out_dir = pathlib.Path(args.out)
    names = [f"{p}-{k}" for p in ("train", "t10k") for k in ("images-idx3-ubyte", "labels-idx1-ubyte")]
    if args.if_missing and all((out_dir / n).is_file() for n in names):
        print(f"{out_dir} already populated")
        return 0
    out_dir.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        tarball = pathlib.Path(args.tarball) if args.tarball else npm_pack(tmp)
        digits = load_digits(tarball)

    train, test = [], []
    for d in range(10):
        for i, img in enumerate(digits[d]):
            (test if i % 5 == 4 else train).append((img, d))
    write_idx(out_dir, "train", [p[0] for p in train], [p[1] for p in train])
    write_idx(out_dir, "t10k", [p[0] for p in test], [p[1] for p in test])
    print(f"wrote {len(train)} train and {len(test)} test samples to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
