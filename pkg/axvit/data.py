"""Labeled image datasets: the seeded synthetic generator, subsets, batching and patchify."""
from dataclasses import dataclass

import numpy as np
import torch

from axvit.errors import DataError

IMAGE_SIZE = 16
NUM_CLASSES = 10
# Class prototypes are shared by every split, so they get their own seed
PROTOTYPE_SEED = 1234


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.images.ndim != 3:
            raise DataError(f"images must be [N, H, W], got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def head(self, n):
        return Dataset(self.images[:n], self.labels[:n])

    def take(self, index):
        return Dataset(self.images[index], self.labels[index])


def synthetic_dataset(n, seed=0, num_classes=NUM_CLASSES, image_size=IMAGE_SIZE, noise=0.6,
                      prototype_seed=PROTOTYPE_SEED):
    prototypes = 0.5 + 0.15 * np.random.default_rng(prototype_seed).standard_normal(
        (num_classes, image_size, image_size))
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=n)
    pixels = prototypes[labels] + noise * rng.standard_normal((n, image_size, image_size))
    images = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    return Dataset(images, labels.astype(np.uint8))


# Seeded fraction of the dataset, at least one sample
def subset(dataset, fraction, seed=0):
    if not 0 < fraction <= 1:
        raise DataError(f"data fraction must lie in (0, 1], got {fraction}")
    if len(dataset) == 0:
        raise DataError("dataset is empty")
    count = max(1, int(round(fraction * len(dataset))))
    index = np.sort(np.random.default_rng(seed).permutation(len(dataset))[:count])
    return dataset.take(index)


def batches(dataset, batch_size, shuffle=False, seed=0):
    order = np.random.default_rng(seed).permutation(len(dataset)) if shuffle else np.arange(len(dataset))
    for start in range(0, len(dataset), batch_size):
        index = order[start:start + batch_size]
        yield torch.from_numpy(dataset.images[index]), torch.from_numpy(dataset.labels[index].astype(np.int64))


# [N, H, W] pixels -> [N, num_patches, patch * patch] floats in [0, 1]
def patchify(images, patch):
    images = torch.as_tensor(images)
    if images.dtype == torch.uint8:
        images = images.to(torch.get_default_dtype()) / 255.0
    n, h, w = images.shape
    if h % patch or w % patch:
        raise DataError(f"{h}x{w} images do not split into {patch}x{patch} patches")
    grid = images.reshape(n, h // patch, patch, w // patch, patch).permute(0, 1, 3, 2, 4)
    return grid.reshape(n, (h // patch) * (w // patch), patch * patch)


# Fixed-seed probe batch for the accuracy surrogate; the whole set when it is smaller
def probe_batch(dataset, size, seed=0):
    if size < 1:
        raise DataError(f"probe size must be >= 1, got {size}")
    if size >= len(dataset):
        return dataset
    return dataset.take(np.sort(np.random.default_rng(seed).permutation(len(dataset))[:size]))
