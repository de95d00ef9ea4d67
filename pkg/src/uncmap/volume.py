"""Dense volumetric containers shared by every estimator and the trainer.

All values are held as flat float64 (or int32 for labels) numpy arrays in
row-major voxel order.  Probability volumes are voxel-major: the C class
probabilities of one voxel are contiguous.  Every container freezes its
payload after construction, so instances can be shared freely across
threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SIMPLEX_TOL = 1e-6


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=dtype)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Shape:
    """Spatial extent of a rank-2 or rank-3 voxel grid."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) not in (2, 3):
            raise ValueError(f"rank must be 2 or 3, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise ValueError(f"all extents must be >= 1, got {dims}")

    @property
    def rank(self) -> int:
        return len(self.dims)

    @property
    def nvoxels(self) -> int:
        return math.prod(self.dims)


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    """One finite float64 value per voxel (uncertainty maps, masks)."""

    shape: Shape
    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values, np.float64)
        object.__setattr__(self, "values", arr)
        if arr.size != self.shape.nvoxels:
            raise ValueError(
                f"expected {self.shape.nvoxels} values, got {arr.size}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite values are not admitted")

    def grid(self) -> np.ndarray:
        """Row-major view with the spatial dims restored."""
        return self.values.reshape(self.shape.dims)


@dataclass(frozen=True, eq=False)
class ProbVolume:
    """Per-voxel simplex vectors over C classes, voxel-major layout."""

    shape: Shape
    classes: int
    values: np.ndarray

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.classes}")
        arr = _frozen_array(self.values, np.float64)
        object.__setattr__(self, "values", arr)
        expected = self.shape.nvoxels * self.classes
        if arr.size != expected:
            raise ValueError(f"expected {expected} values, got {arr.size}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite values are not admitted")
        if not validate_simplex(self, SIMPLEX_TOL):
            raise ValueError(
                f"per-voxel class vectors must lie on the simplex "
                f"(tol {SIMPLEX_TOL})"
            )

    def class_matrix(self) -> np.ndarray:
        """(nvoxels, classes) view; rows are per-voxel simplex vectors."""
        return self.values.reshape(self.shape.nvoxels, self.classes)


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Integer class index per voxel."""

    shape: Shape
    classes: int
    labels: np.ndarray

    def __post_init__(self):
        if self.classes < 1:
            raise ValueError(f"need at least 1 class, got {self.classes}")
        arr = _frozen_array(self.labels, np.int32)
        object.__setattr__(self, "labels", arr)
        if arr.size != self.shape.nvoxels:
            raise ValueError(
                f"expected {self.shape.nvoxels} labels, got {arr.size}"
            )
        if arr.size and (arr.min() < 0 or arr.max() >= self.classes):
            raise ValueError(f"labels must lie in [0, {self.classes})")

    def grid(self) -> np.ndarray:
        return self.labels.reshape(self.shape.dims)

    def one_hot(self) -> np.ndarray:
        """(nvoxels, classes) float64 indicator matrix."""
        out = np.zeros((self.shape.nvoxels, self.classes))
        out[np.arange(self.shape.nvoxels), self.labels] = 1.0
        return out


@dataclass(frozen=True, eq=False)
class SampleStack:
    """T stochastic softmax predictions of one image, identical geometry."""

    volumes: tuple[ProbVolume, ...] = field(default=())

    def __post_init__(self):
        vols = tuple(self.volumes)
        object.__setattr__(self, "volumes", vols)
        if len(vols) < 2:
            raise ValueError(f"need at least 2 passes, got {len(vols)}")
        first = vols[0]
        for v in vols[1:]:
            if v.shape.dims != first.shape.dims or v.classes != first.classes:
                raise ValueError("all passes must share shape and classes")

    @property
    def passes(self) -> int:
        return len(self.volumes)

    @property
    def shape(self) -> Shape:
        return self.volumes[0].shape

    @property
    def classes(self) -> int:
        return self.volumes[0].classes

    def as_array(self) -> np.ndarray:
        """(passes, nvoxels, classes) copy of the stacked predictions."""
        return np.stack([v.class_matrix() for v in self.volumes])


def stack_from_array(samples: np.ndarray, shape: Shape) -> SampleStack:
    """Build a SampleStack from a (passes, nvoxels, classes) array."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3:
        raise ValueError(f"expected a rank-3 array, got rank {samples.ndim}")
    classes = samples.shape[2]
    return SampleStack(
        tuple(ProbVolume(shape, classes, p.reshape(-1)) for p in samples)
    )


def validate_simplex(v: ProbVolume, tol: float) -> bool:
    """True iff every voxel's class vector sums to 1 within tol and all
    entries lie in [-tol, 1 + tol].  Pure predicate, never raises on the
    values themselves."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    mat = v.values.reshape(-1, v.classes)
    if mat.size == 0:
        return True
    sums = mat.sum(axis=1)
    if np.max(np.abs(sums - 1.0)) > tol:
        return False
    return bool(mat.min() >= -tol and mat.max() <= 1.0 + tol)


def mean_prediction(s: SampleStack) -> ProbVolume:
    """Arithmetic per-voxel, per-class mean over the T passes."""
    acc = np.zeros(s.volumes[0].values.size)
    for v in s.volumes:
        acc += v.values
    acc /= s.passes
    return ProbVolume(s.shape, s.classes, acc)
