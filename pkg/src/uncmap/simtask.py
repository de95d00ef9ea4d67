"""Desk-scale synthetic multi-class segmentation data.

Images are (H, W) grids with C - 1 disc-shaped foreground blobs on a
background class.  Pixel features are (intensity, normalized row,
normalized col).  Intensities are class means plus Gaussian noise, and two
of the foreground classes get means closer than two noise sigmas, so their
intensity distributions overlap heavily: exactly the inter-class confusion
regime the divergence estimators are built for.  Blob centers live in
per-class vertical bands with jitter, which makes position informative but
not decisive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import LabelVolume, Shape

FEATURES_PER_PIXEL = 3


@dataclass(frozen=True)
class SyntheticTask:
    image_size: tuple[int, int] = (32, 32)
    classes: int = 4
    class_intensity: tuple[float, ...] = (0.15, 0.40, 0.60, 0.70)
    intensity_noise_std: float = 0.09
    n_labeled: int = 3
    n_unlabeled: int = 60
    n_test: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2 or len(self.class_intensity) != self.classes:
            raise ValueError("need one intensity mean per class, C >= 2")
        if self.intensity_noise_std < 0:
            raise ValueError("intensity_noise_std must be >= 0")
        if min(self.n_labeled, self.n_unlabeled, self.n_test) < 1:
            raise ValueError("all split sizes must be >= 1")
        gaps = np.diff(np.sort(np.asarray(self.class_intensity)))
        if self.intensity_noise_std > 0 and not np.any(
            gaps <= 2.0 * self.intensity_noise_std
        ):
            raise ValueError(
                "at least two classes must have overlapping intensity "
                "distributions (a gap <= 2 * noise std)"
            )

    @property
    def shape(self) -> Shape:
        return Shape(self.image_size)


@dataclass(frozen=True, eq=False)
class SampleImage:
    """One image: per-pixel feature rows plus its ground-truth labels."""

    features: np.ndarray  # (H*W, 3) float64
    labels: np.ndarray  # (H*W,) int32

    def label_volume(self, shape: Shape, classes: int) -> LabelVolume:
        return LabelVolume(shape, classes, self.labels)


@dataclass(frozen=True, eq=False)
class Dataset:
    task: SyntheticTask
    labeled: tuple[SampleImage, ...]
    unlabeled: tuple[SampleImage, ...]
    test: tuple[SampleImage, ...]


def _render_image(task: SyntheticTask, rng) -> SampleImage:
    h, w = task.image_size
    rows, cols = np.mgrid[0:h, 0:w]
    labels = np.zeros((h, w), dtype=np.int32)
    n_blobs = task.classes - 1
    for c in range(1, task.classes):
        band = (c - 0.5) / n_blobs  # vertical band center, fraction of H
        cy = (band + rng.uniform(-0.22, 0.22)) * (h - 1)
        cx = rng.uniform(0.15, 0.85) * (w - 1)
        radius = rng.uniform(0.10, 0.26) * min(h, w)
        labels[(rows - cy) ** 2 + (cols - cx) ** 2 <= radius**2] = c
    intensity = np.asarray(task.class_intensity)[labels]
    intensity = intensity + rng.normal(0.0, task.intensity_noise_std,
                                       size=intensity.shape)
    intensity = np.clip(intensity, 0.0, 1.0)
    features = np.column_stack([
        intensity.reshape(-1),
        (rows / max(h - 1, 1)).reshape(-1),
        (cols / max(w - 1, 1)).reshape(-1),
    ])
    return SampleImage(features, labels.reshape(-1))


def generate_dataset(task: SyntheticTask) -> Dataset:
    """All three splits, deterministic in task.seed."""
    root = np.random.SeedSequence(task.seed)
    streams = [np.random.default_rng(s) for s in root.spawn(3)]
    counts = (task.n_labeled, task.n_unlabeled, task.n_test)
    splits = [
        tuple(_render_image(task, rng) for _ in range(n))
        for rng, n in zip(streams, counts)
    ]
    return Dataset(task, *splits)
