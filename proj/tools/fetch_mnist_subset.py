#!/usr/bin/env python3
"""Build a 6k/1k MNIST subset in IDX format from the `mnist` npm package.

The npm package ships 10,000 MNIST digits (about 1,000 per class) as
normalized floats. This script packs them into the standard IDX layout
(big-endian magic 0x00000803 for images, 0x00000801 for labels), gzipped,
so the C++ loader reads them like the original distribution files.

    tools/fetch_mnist_subset.py --out data/mnist
    tools/fetch_mnist_subset.py --package /path/to/mnist-1.1.0.tgz --out data/mnist
"""

import argparse
import gzip
import json
import random
import struct
import subprocess
import tarfile
import tempfile
from pathlib import Path

SIDE = 28
PIXELS = SIDE * SIDE


def fetch_package(workdir: Path) -> Path:
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True,
                   stdout=subprocess.DEVNULL)
    return workdir / "mnist-1.1.0.tgz"


def load_digits(tgz: Path):
    samples = []
    with tarfile.open(tgz) as tar:
        for label in range(10):
            member = tar.getmember(f"package/src/digits/{label}.json")
            raw = json.load(tar.extractfile(member))["data"]
            count = len(raw) // PIXELS
            for k in range(count):
                pixels = raw[k * PIXELS:(k + 1) * PIXELS]
                samples.append((label, bytes(min(255, max(0, round(v * 255))) for v in pixels)))
    return samples


def write_idx(path_images: Path, path_labels: Path, samples):
    with gzip.open(path_images, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), SIDE, SIDE))
        for _, px in samples:
            f.write(px)
    with gzip.open(path_labels, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for label, _ in samples))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--package", type=Path, help="local mnist npm tarball (fetched with npm if omitted)")
    ap.add_argument("--out", type=Path, default=Path("data/mnist"))
    ap.add_argument("--train-per-class", type=int, default=600)
    ap.add_argument("--test-per-class", type=int, default=100)
    ap.add_argument("--seed", type=int, default=20240521)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tgz = args.package or fetch_package(Path(tmp))
        samples = load_digits(tgz)

    rng = random.Random(args.seed)
    by_label = {c: [s for s in samples if s[0] == c] for c in range(10)}
    train, test = [], []
    for c in range(10):
        pool = by_label[c]
        rng.shuffle(pool)
        need = args.train_per_class + args.test_per_class
        if len(pool) < need:
            raise SystemExit(f"class {c}: only {len(pool)} samples, need {need}")
        train += pool[:args.train_per_class]
        test += pool[args.train_per_class:need]
    rng.shuffle(train)
    rng.shuffle(test)

    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(args.out / "train-images-idx3-ubyte.gz", args.out / "train-labels-idx1-ubyte.gz", train)
    write_idx(args.out / "test-images-idx3-ubyte.gz", args.out / "test-labels-idx1-ubyte.gz", test)
    print(f"wrote {len(train)} train / {len(test)} test samples to {args.out}")


if __name__ == "__main__":
    main()
