#!/usr/bin/env python3
"""Build the vendored MNIST subset under data/mnist/ as gzipped IDX files.

Source material is the `mnist` npm package (v1.1.0, https://github.com/cazala/mnist),
which ships 10,000 genuine MNIST digits as per-class JSON arrays of pixel
intensities rounded to round(p/255, 3); that encoding recovers the original
uint8 bytes exactly via round(v*255).  The 10,000 images are shuffled with a
fixed seed and split 9,000/1,000 into train/test files named like the
canonical MNIST distribution.

Usage: python3 scripts/make_mnist_subset.py <digits_json_dir> [out_dir]
"""

import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np

SEED = 20240817
TEST_COUNT = 1000
SIDE = 28


def load_digits(digits_dir: Path) -> tuple[np.ndarray, np.ndarray]:
    images, labels = [], []
    for digit in range(10):
        with open(digits_dir / f"{digit}.json", "r", encoding="utf-8") as fh:
            flat = np.asarray(json.load(fh)["data"], dtype=np.float64)
        per_class = flat.reshape(-1, SIDE * SIDE)
        recovered = np.rint(per_class * 255.0)
        if not np.array_equal(recovered, np.clip(recovered, 0, 255)):
            raise ValueError(f"digit {digit}: pixels outside byte range")
        images.append(recovered.astype(np.uint8))
        labels.append(np.full(per_class.shape[0], digit, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def write_idx_images(path: Path, images: np.ndarray) -> None:
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(struct.pack(">IIII", 0x00000803, images.shape[0], SIDE, SIDE))
        fh.write(images.tobytes())


def write_idx_labels(path: Path, labels: np.ndarray) -> None:
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        fh.write(labels.tobytes())


def main() -> int:
    if len(sys.argv) < 2:
        print(__doc__)
        return 2
    digits_dir = Path(sys.argv[1])
    out_dir = Path(sys.argv[2]) if len(sys.argv) > 2 else Path(__file__).parent.parent / "data" / "mnist"
    out_dir.mkdir(parents=True, exist_ok=True)

    images, labels = load_digits(digits_dir)
    order = np.random.default_rng(SEED).permutation(images.shape[0])
    images, labels = images[order], labels[order]

    test_imgs, test_labels = images[:TEST_COUNT], labels[:TEST_COUNT]
    train_imgs, train_labels = images[TEST_COUNT:], labels[TEST_COUNT:]
    write_idx_images(out_dir / "train-images-idx3-ubyte.gz", train_imgs)
    write_idx_labels(out_dir / "train-labels-idx1-ubyte.gz", train_labels)
    write_idx_images(out_dir / "t10k-images-idx3-ubyte.gz", test_imgs)
    write_idx_labels(out_dir / "t10k-labels-idx1-ubyte.gz", test_labels)
    print(f"wrote {train_imgs.shape[0]} train / {test_imgs.shape[0]} test images to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
