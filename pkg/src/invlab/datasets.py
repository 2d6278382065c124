"""Deterministic synthetic datasets: 2-D point clouds and 8x8 shape images.

Class labels stand in for prompts; a fixed 10% of items are emitted
unconditioned (label -1, the empty token) so inversion with the empty token
sees in-distribution inputs.  Image values live in [-1, 1]; 2-D points stay
inside the 6-sigma box of their generating component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import DTYPE, Tensor
from .rng import RandomSource

KINDS = ("gaussian_mixture_2d", "spiral_2d", "shapes_8x8")

MIXTURE_RADIUS = 4.0
MIXTURE_SIGMA = 0.3
SPIRAL_NOISE = 0.05
NULL_FRACTION = 0.1
IMAGE_SIDE = 8
SUPERSAMPLE = 4


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    n_train: int = 2000
    n_test: int = 298
    n_classes: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("n_train and n_test must be >= 1")
        if self.kind == "spiral_2d" and self.n_classes != 2:
            raise ValueError("spiral_2d has exactly 2 classes (the two arms)")
        if self.kind == "shapes_8x8" and self.n_classes != 3:
            raise ValueError("shapes_8x8 has exactly 3 classes (rect/circle/cross)")
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")

    @property
    def latent_dim(self) -> int:
        return 2 if self.kind != "shapes_8x8" else IMAGE_SIDE * IMAGE_SIDE


@dataclass
class Dataset:
    latents: np.ndarray  # [n, d] float64
    labels: np.ndarray   # [n] int64; -1 marks the unconditioned (empty-token) items
    spec: DatasetSpec
    role: str            # "train" | "test"

    def __post_init__(self):
        self.latents = np.asarray(self.latents, dtype=DTYPE)
        self.labels = np.asarray(self.labels, dtype=np.int64)

    def __len__(self) -> int:
        return self.latents.shape[0]

    @property
    def n_classes(self) -> int:
        return self.spec.n_classes

    def item(self, i: int) -> tuple[Tensor, int]:
        return Tensor(self.latents[i]), int(self.labels[i])

    def equals(self, other: "Dataset") -> bool:
        return (self.spec == other.spec and self.role == other.role
                and np.array_equal(self.latents, other.latents)
                and np.array_equal(self.labels, other.labels))


def mixture_centers(n_classes: int) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    return MIXTURE_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _sample_mixture(rng: RandomSource, n: int, n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    centers = mixture_centers(n_classes)
    labels = rng.integers(0, n_classes, (n,)).astype(np.int64)
    offsets = MIXTURE_SIGMA * rng.normal_array((n, 2))
    # resample the rare tails so every point stays inside the 6-sigma box
    for _ in range(16):
        bad = np.abs(offsets).max(axis=1) > 6.0 * MIXTURE_SIGMA
        if not bad.any():
            break
        offsets[bad] = MIXTURE_SIGMA * rng.normal_array((int(bad.sum()), 2))
    return centers[labels] + offsets, labels


def _sample_spiral(rng: RandomSource, n: int) -> tuple[np.ndarray, np.ndarray]:
    labels = rng.integers(0, 2, (n,)).astype(np.int64)
    u = rng.uniform((n,))
    theta = 0.5 * np.pi + 2.5 * np.pi * u
    radius = MIXTURE_RADIUS * theta / (3.0 * np.pi)
    radial = SPIRAL_NOISE * rng.normal_array((n,))
    np.clip(radial, -6.0 * SPIRAL_NOISE, 6.0 * SPIRAL_NOISE, out=radial)
    radius = radius + radial
    phase = theta + np.pi * labels
    return np.stack([radius * np.cos(phase), radius * np.sin(phase)], axis=1), labels


def _render_shape(kind: int, cx: float, cy: float, size: float) -> np.ndarray:
    """Coverage-antialiased 8x8 grayscale in [-1, 1]; 1 inside the shape."""
    side = IMAGE_SIDE * SUPERSAMPLE
    coords = (np.arange(side) + 0.5) / SUPERSAMPLE
    xx, yy = np.meshgrid(coords, coords, indexing="xy")
    if kind == 0:  # rectangle
        mask = (np.abs(xx - cx) <= size) & (np.abs(yy - cy) <= 0.7 * size)
    elif kind == 1:  # circle
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= size ** 2
    else:  # cross
        w = 0.45 * size
        mask = ((np.abs(xx - cx) <= w) & (np.abs(yy - cy) <= size)) | \
               ((np.abs(yy - cy) <= w) & (np.abs(xx - cx) <= size))
    cover = mask.astype(DTYPE).reshape(IMAGE_SIDE, SUPERSAMPLE, IMAGE_SIDE, SUPERSAMPLE)
    return 2.0 * cover.mean(axis=(1, 3)) - 1.0


def _sample_shapes(rng: RandomSource, n: int) -> tuple[np.ndarray, np.ndarray]:
    labels = rng.integers(0, 3, (n,)).astype(np.int64)
    out = np.empty((n, IMAGE_SIDE * IMAGE_SIDE), dtype=DTYPE)
    for i in range(n):
        cx, cy = 2.5 + 3.0 * rng.uniform(()), 2.5 + 3.0 * rng.uniform(())
        size = 1.2 + 1.3 * rng.uniform(())
        out[i] = _render_shape(int(labels[i]), cx, cy, size).reshape(-1)
    return out, labels


def generate(spec: DatasetSpec) -> tuple[Dataset, Dataset]:
    """Deterministic train/test pair; the splits never share an item index."""
    rng = RandomSource(spec.seed, stream=101)
    n = spec.n_train + spec.n_test
    if spec.kind == "gaussian_mixture_2d":
        latents, labels = _sample_mixture(rng, n, spec.n_classes)
    elif spec.kind == "spiral_2d":
        latents, labels = _sample_spiral(rng, n)
    else:
        latents, labels = _sample_shapes(rng, n)
    null_mask = rng.uniform((n,)) < NULL_FRACTION
    labels = np.where(null_mask, -1, labels)
    train = Dataset(latents[:spec.n_train], labels[:spec.n_train], spec, "train")
    test = Dataset(latents[spec.n_train:], labels[spec.n_train:], spec, "test")
    return train, test


def save(dataset: Dataset, path) -> None:
    from . import serialization
    serialization.save_dataset(dataset, path)


def load(path) -> Dataset:
    from . import serialization
    return serialization.load_dataset(path)
