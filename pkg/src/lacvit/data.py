"""Dataset ingestion, synthetic generation, patchification, and batching.

Two sources are supported: the CIFAR binary record layout (both the 1-label-
byte and 2-label-byte variants) and a deterministic synthetic generator whose
classes are distinct geometric patterns.  Synthetic datasets can be exported
in the CIFAR layout for interchange, so the training pipeline only ever loads
from files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, ContractError, DataFormatError
from .rng import RngStream

CIFAR_IMAGE_SIZE = 32
_PIXELS_PER_RECORD = CIFAR_IMAGE_SIZE * CIFAR_IMAGE_SIZE * 3


@dataclass
class LabeledExample:
    """A square H x W x 3 image with pixels in [0, 1] and an integer label."""

    pixels: np.ndarray
    label: int

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ContractError(f"pixels must be H x W x 3, got {self.pixels.shape}")
        if self.pixels.shape[0] != self.pixels.shape[1]:
            raise ContractError("only square images are supported")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ContractError("pixel values must lie in [0, 1]")


@dataclass
class ImageDataset:
    examples: list[LabeledExample]
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        if not self.examples:
            raise ContractError("dataset must be non-empty")
        for ex in self.examples:
            if not (0 <= ex.label < self.num_classes):
                raise ContractError(
                    f"label {ex.label} out of range for {self.num_classes} classes"
                )

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def image_size(self) -> int:
        return self.examples[0].pixels.shape[0]

    def labels(self) -> np.ndarray:
        return np.array([ex.label for ex in self.examples], dtype=np.int64)


@dataclass
class Batch:
    indices: np.ndarray  # positions within the source dataset
    pixels: np.ndarray  # B x H x W x 3
    labels: np.ndarray  # B

    def __len__(self) -> int:
        return len(self.indices)


# ---------------------------------------------------------------------------
# CIFAR binary layout


def load_cifar_binary(path, num_classes: int, label_bytes: int = 1) -> ImageDataset:
    """Read CIFAR-format records: label byte(s) then 3072 planar RGB bytes.

    ``label_bytes`` is 1 for the CIFAR-10 layout and 2 for CIFAR-100 (coarse
    byte then fine byte; the fine label is used).
    """
    if label_bytes not in (1, 2):
        raise ContractError("label_bytes must be 1 or 2")
    raw = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    record = label_bytes + _PIXELS_PER_RECORD
    if raw.size == 0 or raw.size % record != 0:
        raise DataFormatError(
            f"{path}: file length {raw.size} is not a positive multiple of "
            f"record size {record}"
        )
    records = raw.reshape(-1, record)
    labels = records[:, label_bytes - 1].astype(np.int64)
    bad = np.nonzero(labels >= num_classes)[0]
    if bad.size:
        raise DataFormatError(
            f"{path}: record {bad[0]} has label {labels[bad[0]]} "
            f">= num_classes {num_classes}"
        )
    planes = records[:, label_bytes:].reshape(-1, 3, CIFAR_IMAGE_SIZE, CIFAR_IMAGE_SIZE)
    pixels = planes.transpose(0, 2, 3, 1).astype(np.float64) / 255.0
    examples = [
        LabeledExample(pixels=pixels[i], label=int(labels[i]))
        for i in range(records.shape[0])
    ]
    return ImageDataset(examples=examples, num_classes=num_classes)


def save_cifar_binary(dataset: ImageDataset, path, label_bytes: int = 1) -> None:
    """Write a dataset in the CIFAR layout (pixels quantized to bytes)."""
    if label_bytes not in (1, 2):
        raise ContractError("label_bytes must be 1 or 2")
    if dataset.image_size != CIFAR_IMAGE_SIZE:
        raise ContractError(
            f"CIFAR layout is fixed at {CIFAR_IMAGE_SIZE}x{CIFAR_IMAGE_SIZE} images"
        )
    chunks = []
    for ex in dataset.examples:
        if label_bytes == 2:
            chunks.append(bytes([0, ex.label]))  # coarse byte unused
        else:
            chunks.append(bytes([ex.label]))
        planar = np.round(ex.pixels * 255.0).astype(np.uint8).transpose(2, 0, 1)
        chunks.append(planar.tobytes())
    Path(path).write_bytes(b"".join(chunks))


# ---------------------------------------------------------------------------
# synthetic data


def class_template(class_id: int, size: int) -> np.ndarray:
    """Deterministic grayscale pattern for one class, replicated over RGB.

    Classes cycle through horizontal stripes, vertical stripes, checkerboard,
    and a centered disk; every fourth class reuses a pattern at a finer scale
    (or a larger disk), keeping all templates mutually distinguishable.
    """
    kind = class_id % 4
    variant = class_id // 4
    lo, hi = 0.2, 0.8
    ys, xs = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    if kind == 0:
        period = max(2, size // (4 * (variant + 1)))
        mask = (ys // period) % 2 == 0
    elif kind == 1:
        period = max(2, size // (4 * (variant + 1)))
        mask = (xs // period) % 2 == 0
    elif kind == 2:
        cell = max(2, size // (4 * (variant + 1)))
        mask = ((ys // cell) + (xs // cell)) % 2 == 0
    else:
        radius = size * (0.18 + 0.07 * variant)
        center = (size - 1) / 2.0
        mask = (ys - center) ** 2 + (xs - center) ** 2 <= radius**2
    img = np.where(mask, hi, lo)
    return np.repeat(img[:, :, None], 3, axis=2)


def gen_synthetic(
    num_classes: int,
    per_class: int,
    size: int,
    noise_sigma: float,
    seed: int,
    split: str = "train",
) -> ImageDataset:
    """Per-class template plus clamped Gaussian pixel noise; fully seeded."""
    if num_classes > 16:
        raise ContractError("synthetic generator supports at most 16 classes")
    if per_class < 1:
        raise ContractError("per_class must be >= 1")
    root = RngStream(seed, 0)
    examples = []
    for c in range(num_classes):
        template = class_template(c, size)
        for i in range(per_class):
            noise = root.child("noise", split, c, i).normal(0.0, 1.0, template.shape)
            pixels = np.clip(template + noise_sigma * noise, 0.0, 1.0)
            examples.append(LabeledExample(pixels=pixels, label=c))
    return ImageDataset(examples=examples, num_classes=num_classes, split=split)


# ---------------------------------------------------------------------------
# patchification


@dataclass
class PatchSequence:
    patches: np.ndarray  # T x (p*p*3), raster order
    patch_size: int


def patchify(pixels: np.ndarray, p: int) -> PatchSequence:
    """Split an H x W x 3 image into non-overlapping p x p patch rows.

    Row t covers grid cell (t // (H/p), t % (H/p)); within a row, values run
    row-major over (y, x, channel).
    """
    h = pixels.shape[0]
    if h % p != 0:
        raise ContractError(f"image size {h} is not divisible by patch size {p}")
    return PatchSequence(patches=patchify_batch(pixels[None], p)[0], patch_size=p)


def patchify_batch(pixels: np.ndarray, p: int) -> np.ndarray:
    """Vectorized patchify over a B x H x W x 3 stack; returns B x T x (p*p*3)."""
    b, h, w, c = pixels.shape
    if h % p != 0 or w % p != 0:
        raise ContractError(f"image size {h}x{w} is not divisible by patch size {p}")
    g = h // p
    tiles = pixels.reshape(b, g, p, g, p, c).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(tiles.reshape(b, g * g, p * p * c))


def unpatchify(seq: PatchSequence, image_size: int) -> np.ndarray:
    """Inverse of :func:`patchify`; exact by construction."""
    p = seq.patch_size
    g = image_size // p
    tiles = seq.patches.reshape(g, g, p, p, 3).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(tiles.reshape(image_size, image_size, 3))


# ---------------------------------------------------------------------------
# batching


def batches(
    dataset: ImageDataset,
    batch_size: int,
    rng: RngStream,
    contrastive: bool = False,
) -> Iterator[Batch]:
    """Shuffled mini-batches for one epoch; the final short batch is kept."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    if contrastive and batch_size < 2:
        raise ConfigError("contrastive training needs batch_size >= 2")
    order = rng.permutation(len(dataset))
    for start in range(0, len(dataset), batch_size):
        idx = order[start : start + batch_size]
        pixels = np.stack([dataset.examples[i].pixels for i in idx])
        labels = np.array([dataset.examples[i].label for i in idx], dtype=np.int64)
        yield Batch(indices=idx, pixels=pixels, labels=labels)
