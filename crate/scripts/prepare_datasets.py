#!/usr/bin/env python3
"""Fetch MNIST and Fashion-MNIST from npm and lay them out under a data root.

Usage: python3 scripts/prepare_datasets.py /path/to/data-root

Produces <root>/mnist and <root>/fashion-mnist, each holding IDX files and a
manifest.toml understood by `ldc --dataset <name>` (with LDC_DATA_ROOT=<root>).

The npm `fashion-mnist` package ships 7000 images per class grouped by class
without the official split; the first 6000 of each class become the training
split and the remaining 1000 the test split (60000/10000 overall).

UCIHAR, ISOLET and CTG are not redistributed through a package registry. Place
the official files under <root>/ucihar, <root>/isolet and <root>/ctg and copy
the matching manifest from `manifests/`.
"""

import json
import shutil
import struct
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path

MNIST_FILES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]

IDX_MANIFEST = """name = "{name}"
format = "idx"

[train]
images = "train-images-idx3-ubyte"
labels = "train-labels-idx1-ubyte"

[test]
images = "t10k-images-idx3-ubyte"
labels = "t10k-labels-idx1-ubyte"
"""


def npm_unpack(package: str, workdir: Path) -> Path:
    subprocess.run(["npm", "pack", package], cwd=workdir, check=True, capture_output=True)
    tgz = next(workdir.glob(f"{package}-*.tgz"))
    dest = workdir / package
    with tarfile.open(tgz) as tar:
        tar.extractall(dest)
    return dest / "package"


def write_idx_images(path: Path, rows):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
        for row in rows:
            f.write(bytes(row))


def write_idx_labels(path: Path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def prepare_mnist(root: Path, work: Path):
    pkg = npm_unpack("mnist-data", work)
    out = root / "mnist"
    out.mkdir(parents=True, exist_ok=True)
    for name in MNIST_FILES:
        shutil.copyfile(pkg / "data" / name, out / name)
    (out / "manifest.toml").write_text(IDX_MANIFEST.format(name="mnist"))


def prepare_fashion(root: Path, work: Path):
    pkg = npm_unpack("fashion-mnist", work)
    train, test = [], []
    for label in range(10):
        rows = json.loads((pkg / "src" / "clothes" / f"{label}.json").read_text())["data"]
        rows = [r for r in rows if len(r) == 784][:7000]
        if len(rows) != 7000:
            raise SystemExit(f"class {label}: expected 7000 images, found {len(rows)}")
        train += [(r, label) for r in rows[:6000]]
        test += [(r, label) for r in rows[6000:]]
    out = root / "fashion-mnist"
    out.mkdir(parents=True, exist_ok=True)
    for prefix, split in (("train", train), ("t10k", test)):
        write_idx_images(out / f"{prefix}-images-idx3-ubyte", [r for r, _ in split])
        write_idx_labels(out / f"{prefix}-labels-idx1-ubyte", [l for _, l in split])
    (out / "manifest.toml").write_text(IDX_MANIFEST.format(name="fashion-mnist"))


def main():
    if len(sys.argv) != 2:
        raise SystemExit(__doc__)
    root = Path(sys.argv[1]).resolve()
    root.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        prepare_mnist(root, Path(tmp))
        prepare_fashion(root, Path(tmp))
    print(f"datasets written under {root}")


if __name__ == "__main__":
    main()
