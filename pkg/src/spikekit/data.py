"""Deterministic synthetic image sets for smoke training.

Three families, none linearly separable at the pixel level once phase,
position or polarity jitter is applied: oriented square-wave gratings
(4 classes), localised bumps at four anchor positions (4 classes), and a
two-patch parity task (2 classes). Images are float32 ``[C, H, W]`` with
roughly unit scale; the same ``(kind, n_per_class, geometry, seed)``
always yields the same arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Dataset", "synth_dataset", "SYNTH_KINDS"]

SYNTH_KINDS = ("stripes", "blobs", "xor-patch")


@dataclass
class Dataset:
    images: np.ndarray  # float32 [n, C, H, W]
    labels: np.ndarray  # int64 [n]
    num_classes: int

    def __post_init__(self) -> None:
        if self.images.ndim != 4:
            raise ValueError("images must be [n, C, H, W]")
        if len(self.labels) != len(self.images):
            raise ValueError("labels and images disagree in length")
        if len(self.labels) and (
            self.labels.min() < 0 or self.labels.max() >= self.num_classes
        ):
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return len(self.images)


def _check_geometry(geometry) -> tuple:
    channels, height, width = (int(x) for x in geometry)
    if channels < 1 or height < 16 or width < 16:
        raise ValueError(f"invalid geometry {geometry}")
    if height % 16 or width % 16:
        raise ValueError(f"height and width must be divisible by 16, got {geometry}")
    return channels, height, width


def _stripes(rng, n_per_class, channels, height, width):
    period = 8.0
    angles = np.deg2rad([0.0, 45.0, 90.0, 135.0])
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    images, labels = [], []
    for label, angle in enumerate(angles):
        direction = np.cos(angle) * xx + np.sin(angle) * yy
        for _ in range(n_per_class):
            phase = rng.uniform(0.0, 2.0 * np.pi)
            pattern = np.sign(np.sin(2.0 * np.pi * direction / period + phase))
            img = pattern[None, :, :] + rng.normal(0.0, 0.3, (channels, height, width))
            images.append(img)
            labels.append(label)
    return images, labels, 4


def _blobs(rng, n_per_class, channels, height, width):
    anchors = [
        (height / 4, width / 4),
        (height / 4, 3 * width / 4),
        (3 * height / 4, width / 4),
        (3 * height / 4, 3 * width / 4),
    ]
    sigma = height / 8.0
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    images, labels = [], []
    for label, (cy, cx) in enumerate(anchors):
        for _ in range(n_per_class):
            jy = cy + rng.uniform(-height / 16, height / 16)
            jx = cx + rng.uniform(-width / 16, width / 16)
            bump = 2.0 * np.exp(-((yy - jy) ** 2 + (xx - jx) ** 2) / (2 * sigma**2))
            img = bump[None, :, :] + rng.normal(0.0, 0.3, (channels, height, width))
            img -= img.mean()
            images.append(img)
            labels.append(label)
    return images, labels, 4


def _xor_patch(rng, n_per_class, channels, height, width):
    images, labels = [], []
    half = width // 2
    for label in (0, 1):
        for _ in range(n_per_class):
            if label == 0:
                left, right = ((-1.0, -1.0), (1.0, 1.0))[rng.integers(2)]
            else:
                left, right = ((-1.0, 1.0), (1.0, -1.0))[rng.integers(2)]
            img = np.empty((channels, height, width))
            img[:, :, :half] = left
            img[:, :, half:] = right
            img += rng.normal(0.0, 0.3, img.shape)
            images.append(img)
            labels.append(label)
    return images, labels, 2


def synth_dataset(kind: str, n_per_class: int, geometry, seed: int) -> Dataset:
    """Build one of the synthetic families; see module docstring."""
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}, choose from {SYNTH_KINDS}")
    if n_per_class < 0:
        raise ValueError("n_per_class must be non-negative")
    channels, height, width = _check_geometry(geometry)
    rng = np.random.default_rng(seed)
    maker = {"stripes": _stripes, "blobs": _blobs, "xor-patch": _xor_patch}[kind]
    images, labels, num_classes = maker(rng, n_per_class, channels, height, width)
    if not images:
        return Dataset(
            images=np.zeros((0, channels, height, width), dtype=np.float32),
            labels=np.zeros((0,), dtype=np.int64),
            num_classes=num_classes,
        )
    stacked = np.stack(images).astype(np.float32)
    return Dataset(
        images=stacked,
        labels=np.asarray(labels, dtype=np.int64),
        num_classes=num_classes,
    )
