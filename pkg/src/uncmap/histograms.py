"""Per-voxel, per-class binned distributions of the T softmax samples.

Binning convention: K equal bins on [0, 1] with edges k/K evaluated in
float64; bin k covers [k/K, (k+1)/K) and the last bin is closed at 1, so a
sample of exactly 1.0 lands in bin K-1.  Rows are normalized by T, i.e.
each histogram is a probability mass function.  Classes are ranked by
ascending sample mean; ties fall back to ascending class index so the
ordering is fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import SampleStack

DEFAULT_BINS = 10
ROW_MASS_TOL = 1e-12


@dataclass(frozen=True)
class HistogramSpec:
    """K equal-width bins over the fixed interval [0, 1]."""

    bins: int = DEFAULT_BINS

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError(f"need at least 2 bins, got {self.bins}")

    def edges(self) -> np.ndarray:
        """The K+1 bin edges k/K, k = 0..K."""
        return np.arange(self.bins + 1) / self.bins


@dataclass(frozen=True, eq=False)
class ClassHistogramSet:
    """Binned sample distributions of one voxel.

    ``hist[c]`` and ``means[c]`` are indexed by the original class c;
    ``class_order`` is the permutation that sorts classes by ascending mean.
    """

    class_order: np.ndarray
    hist: np.ndarray
    means: np.ndarray

    def __post_init__(self):
        order = np.asarray(self.class_order, dtype=np.int64)
        hist = np.asarray(self.hist, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.float64)
        object.__setattr__(self, "class_order", order)
        object.__setattr__(self, "hist", hist)
        object.__setattr__(self, "means", means)
        c = means.size
        if sorted(order.tolist()) != list(range(c)) or hist.shape[0] != c:
            raise ValueError("class_order must permute 0..C-1")
        if np.max(np.abs(hist.sum(axis=1) - 1.0)) > ROW_MASS_TOL:
            raise ValueError("histogram rows must each sum to 1")
        ordered = means[order]
        if np.any(np.diff(ordered) < 0):
            raise ValueError("means must be non-decreasing along class_order")

    @property
    def classes(self) -> int:
        return self.means.size


def bin_indices(values: np.ndarray, bins: int) -> np.ndarray:
    """Bin index of each sample in [0, 1] under the module convention."""
    edges = np.arange(bins + 1) / bins
    idx = np.searchsorted(edges, values, side="right") - 1
    return np.clip(idx, 0, bins - 1)


def table_from_samples(samples: np.ndarray, bins: int):
    """Vectorized histograms for a raw (T, V, C) sample array.

    Returns (hist, means, order) with shapes (V, C, K), (V, C) and (V, C);
    order rows sort classes by ascending mean, ties by class index.
    """
    t, v, c = samples.shape
    idx = bin_indices(samples, bins)
    flat = (np.arange(v * c, dtype=np.int64) * bins)[None, :] \
        + idx.reshape(t, -1)
    counts = np.bincount(flat.ravel(), minlength=v * c * bins)
    hist = counts.reshape(v, c, bins) / t
    means = samples.mean(axis=0)
    order = np.argsort(means, axis=1, kind="stable")
    return hist, means, order


def histogram_table(s: SampleStack, spec: HistogramSpec):
    """histograms, means and mean-sort order for every voxel of a stack."""
    return table_from_samples(s.as_array(), spec.bins)


def build_histograms(s: SampleStack, spec: HistogramSpec,
                     voxel: int) -> ClassHistogramSet:
    """Histograms of the T samples of every class at one voxel."""
    nvox = s.shape.nvoxels
    if not 0 <= voxel < nvox:
        raise IndexError(f"voxel {voxel} out of range [0, {nvox})")
    t, c, k = s.passes, s.classes, spec.bins
    samples = np.empty((t, c))
    for i, vol in enumerate(s.volumes):
        samples[i] = vol.class_matrix()[voxel]
    hist = np.zeros((c, k))
    idx = bin_indices(samples, k)
    for row in idx:
        hist[np.arange(c), row] += 1.0
    hist /= t
    means = samples.mean(axis=0)
    order = np.argsort(means, kind="stable")
    return ClassHistogramSet(order, hist, means)


def top2(chs: ClassHistogramSet) -> tuple[np.ndarray, np.ndarray]:
    """Histogram rows of the two highest-mean classes, lower mean first."""
    lo, hi = chs.class_order[-2], chs.class_order[-1]
    return chs.hist[lo], chs.hist[hi]
