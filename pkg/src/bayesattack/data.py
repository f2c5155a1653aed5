"""Dataset loading (IDX image/label files) and synthetic problem generation."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import BadMagicError, CountMismatchError, IdxFormatError, TruncatedFileError
from .models import MLPLayer, MLPModel, MLPWeights

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class LabeledImage:
    """One ``(C, H, W)`` image in ``[0, 1]`` with its class label and id."""

    image: np.ndarray
    label: int
    id: str


def _open_maybe_gzip(path):
    path = Path(path)
    with open(path, "rb") as fh:
        gzipped = fh.read(2) == b"\x1f\x8b"
    return gzip.open(path, "rb") if gzipped else open(path, "rb")


def _read_exact(fh, count: int, path) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise TruncatedFileError(f"{path}: expected {count} more bytes, got {len(data)}")
    return data


def load_idx(images_path, labels_path, id_prefix: str = "img") -> list[LabeledImage]:
    """Load an IDX image/label file pair (plain or gzipped).

    Images are unsigned bytes scaled to ``[0, 1]`` with a single channel;
    pixel ``(i, j)`` of image ``n`` sits at payload offset ``n*H*W + i*W + j``.
    """
    with _open_maybe_gzip(images_path) as fh:
        magic, count, height, width = struct.unpack(">IIII", _read_exact(fh, 16, images_path))
        if magic != IMAGES_MAGIC:
            raise BadMagicError(f"{images_path}: magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")
        raw = _read_exact(fh, count * height * width, images_path)
        if fh.read(1):
            raise IdxFormatError(f"{images_path}: trailing bytes after {count} images")
    with _open_maybe_gzip(labels_path) as fh:
        magic, label_count = struct.unpack(">II", _read_exact(fh, 8, labels_path))
        if magic != LABELS_MAGIC:
            raise BadMagicError(f"{labels_path}: magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")
        labels = np.frombuffer(_read_exact(fh, label_count, labels_path), dtype=np.uint8)
        if fh.read(1):
            raise IdxFormatError(f"{labels_path}: trailing bytes after {label_count} labels")
    if label_count != count:
        raise CountMismatchError(f"{count} images but {label_count} labels")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(count, 1, height, width)
    images = pixels.astype(np.float64) / 255.0
    return [
        LabeledImage(image=images[i], label=int(labels[i]), id=f"{id_prefix}-{i:05d}")
        for i in range(count)
    ]


def find_idx_pair(directory) -> tuple[Path, Path]:
    """Locate an images/labels IDX pair in a directory, test split first."""
    directory = Path(directory)
    candidates = sorted(p for p in directory.iterdir() if "images" in p.name)
    if not candidates:
        raise FileNotFoundError(f"no '*images*' IDX file under {directory}")
    candidates.sort(key=lambda p: 0 if p.name.startswith(("t10k", "test")) else 1)
    for images in candidates:
        labels = images.with_name(images.name.replace("images", "labels").replace("idx3", "idx1"))
        if labels.exists():
            return images, labels
    raise FileNotFoundError(f"no matching '*labels*' file for {candidates[0]}")


@dataclass(frozen=True)
class LinearProblem:
    """Synthetic Gaussian-blob dataset plus its Bayes-optimal linear model."""

    dataset: list[LabeledImage]
    weight: np.ndarray  # (K, d)
    bias: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    noise_std: float

    def to_model(self) -> MLPModel:
        """The generating linear classifier as a single identity-layer MLP."""
        d = self.weight.shape[1]
        layer = MLPLayer(weight=self.weight.copy(), bias=self.bias.copy(), activation="identity")
        return MLPModel(
            MLPWeights(layers=[layer], input_shape=(1, 1, d), num_classes=self.weight.shape[0])
        )


def make_synthetic_linear(
    dim: int,
    num_classes: int,
    count: int,
    seed: int = 0,
    sep: float = 6.0,
    noise_std: float = 0.08,
) -> LinearProblem:
    """Class-conditional Gaussian blobs with a known Bayes-optimal classifier.

    Class means are drawn inside the pixel box and rescaled about their
    center so the closest pair sits ``sep`` noise standard deviations apart
    (``sep=0`` collapses all means, driving accuracy to chance).  Labels
    cycle round-robin, and samples are clipped to ``[0, 1]``.
    """
    if dim < 2 or num_classes < 2 or count < 1:
        raise ValueError("need dim >= 2, num_classes >= 2, count >= 1")
    if noise_std <= 0:
        raise ValueError("noise_std must be positive")
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.35, 0.65, size=(num_classes, dim))
    center = raw.mean(axis=0)
    if sep > 0:
        dists = [
            np.linalg.norm(raw[i] - raw[j])
            for i in range(num_classes)
            for j in range(i + 1, num_classes)
        ]
        closest = min(dists)
        scale = (sep * noise_std) / closest if closest > 0 else 0.0
        means = np.clip(center + (raw - center) * scale, 0.1, 0.9)
    else:
        means = np.tile(center, (num_classes, 1))
    labels = np.arange(count) % num_classes
    samples = means[labels] + noise_std * rng.standard_normal((count, dim))
    samples = np.clip(samples, 0.0, 1.0)
    # Bayes rule for equal-covariance Gaussians is linear in x.
    weight = means / noise_std**2
    bias = -(means * means).sum(axis=1) / (2.0 * noise_std**2)
    dataset = [
        LabeledImage(image=samples[i].reshape(1, 1, dim), label=int(labels[i]), id=f"synth-{i:05d}")
        for i in range(count)
    ]
    return LinearProblem(
        dataset=dataset, weight=weight, bias=bias, means=means, noise_std=noise_std
    )
