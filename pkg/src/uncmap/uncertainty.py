"""Voxel-wise uncertainty maps and the certainty masks derived from them.

Orientation. The divergences measure *separation* of the per-class sample
histograms: large means the top classes are cleanly distinguishable, i.e.
the voxel is certain.  Consistency gating wants the opposite sign (keep
voxels with u below a threshold), so divergence maps are reoriented as
u = M - D, where M is the map-wide maximum of the raw divergence.  The raw
map is kept on the result for inspection.  Entropy maps already point the
right way and are published raw.

Quantile masks keep a fixed fraction of the lowest-u voxels, which makes
mask sizes comparable across estimators whose values live on entirely
different scales.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .divergences import DEFAULT_EPSILON, DivergenceSpec, entropy_rows
from .histograms import HistogramSpec, table_from_samples
from .volume import SampleStack, ScalarVolume, Shape

QUANTILE = "quantile"
ABSOLUTE = "absolute"

DEFAULT_KEEP_FRACTION = 0.75
_PARALLEL_MIN_VOXELS = 65536


@dataclass(frozen=True, eq=False)
class UncertaintyMap:
    """Nonnegative scalar field u_v plus the descriptor that produced it."""

    shape: Shape
    u: ScalarVolume
    estimator: dict
    raw: ScalarVolume | None = None

    def __post_init__(self):
        if self.u.shape.dims != self.shape.dims:
            raise ValueError("map values disagree with the declared shape")
        if self.u.values.size and self.u.values.min() < 0:
            raise ValueError("uncertainty values must be nonnegative")


@dataclass(frozen=True)
class MaskPolicy:
    """How to turn a map into a 0/1 certainty mask.

    quantile: keep exactly floor(keep_fraction * nvoxels) lowest-u voxels.
    absolute: keep voxels with u strictly below the threshold.
    """

    mode: str = QUANTILE
    keep_fraction: float = DEFAULT_KEEP_FRACTION
    threshold: float | None = None

    def __post_init__(self):
        if self.mode == QUANTILE:
            if not 0.0 < self.keep_fraction <= 1.0:
                raise ValueError(
                    f"keep_fraction must lie in (0, 1], got {self.keep_fraction}"
                )
        elif self.mode == ABSOLUTE:
            if self.threshold is None or self.threshold < 0:
                raise ValueError("absolute mode needs a threshold >= 0")
        else:
            raise ValueError(f"unknown mask mode {self.mode!r}")

    def describe(self) -> dict:
        if self.mode == QUANTILE:
            return {"mode": self.mode, "keep_fraction": self.keep_fraction}
        return {"mode": self.mode, "threshold": self.threshold}


def worker_count() -> int:
    """Worker cap from UNCMAP_THREADS; 0 or unset means auto."""
    raw = os.environ.get("UNCMAP_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"UNCMAP_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise ValueError(f"UNCMAP_THREADS must be >= 0, got {n}")
    return n if n > 0 else (os.cpu_count() or 1)


def _rowwise(func, *arrays, workers: int | None = None) -> np.ndarray:
    """Apply a row-kernel over voxel chunks, optionally on worker threads.

    Chunks write disjoint slices of the output, so the result is identical
    for any worker count.
    """
    n = arrays[0].shape[0]
    workers = worker_count() if workers is None else workers
    if workers <= 1 or n < _PARALLEL_MIN_VOXELS:
        return func(*arrays)
    out = None
    bounds = np.linspace(0, n, workers + 1, dtype=int)

    def run(lo, hi):
        nonlocal out
        part = func(*(a[lo:hi] for a in arrays))
        if out is None:
            out = np.empty(n, dtype=part.dtype)
        out[lo:hi] = part

    run(bounds[0], bounds[1])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(lambda b: run(*b), zip(bounds[1:-1], bounds[2:])))
    return out


def entropy_scores(samples: np.ndarray) -> np.ndarray:
    """Entropy of the mean prediction per voxel of a (T, V, C) array."""
    mu = np.clip(samples.mean(axis=0), 0.0, 1.0)
    return _rowwise(lambda m: entropy_rows(m, DEFAULT_EPSILON), mu)


def divergence_scores(samples: np.ndarray, hspec: HistogramSpec,
                      dspec: DivergenceSpec,
                      all_pairs: bool = False) -> np.ndarray:
    """Raw per-voxel histogram separation of a (T, V, C) array.

    Top-2 mode measures the two highest-mean classes; all-pairs mode the
    max over (lowest, other) class pairs.  High means separable (certain).
    """
    hist, _, order = table_from_samples(samples, hspec.bins)
    classes = samples.shape[2]
    if all_pairs:
        pairs = [(0, pos) for pos in range(1, classes)]
    else:
        pairs = [(classes - 2, classes - 1)]
    rows = np.arange(hist.shape[0])
    raw = None
    for lo_pos, hi_pos in pairs:
        p = hist[rows, order[:, lo_pos], :]
        q = hist[rows, order[:, hi_pos], :]
        d = _rowwise(dspec.evaluate_rows, p, q)
        raw = d if raw is None else np.maximum(raw, d)
    return raw


def entropy_map(s: SampleStack) -> UncertaintyMap:
    """Entropy of the mean prediction, per voxel; the status-quo estimator."""
    u = entropy_scores(s.as_array())
    estimator = {"method": "entropy", "passes": s.passes}
    return UncertaintyMap(s.shape, ScalarVolume(s.shape, u), estimator)


def _divergence_map(s, hspec, dspec, all_pairs, method):
    raw = divergence_scores(s.as_array(), hspec, dspec, all_pairs=all_pairs)
    m = float(raw.max()) if raw.size else 0.0
    estimator = {
        "method": method,
        "passes": s.passes,
        "bins": hspec.bins,
        "orientation": "max-minus-divergence",
        "raw_max": m,
    }
    estimator.update(dspec.describe())
    return UncertaintyMap(
        s.shape,
        ScalarVolume(s.shape, m - raw),
        estimator,
        raw=ScalarVolume(s.shape, raw),
    )


def divergence_map_top2(s: SampleStack, hspec: HistogramSpec,
                        dspec: DivergenceSpec) -> UncertaintyMap:
    """Divergence between the two highest-mean class histograms per voxel,
    reoriented so heavy top-2 overlap reads as high uncertainty."""
    return _divergence_map(s, hspec, dspec, False, "divergence-top2")


def divergence_map_maxall(s: SampleStack, hspec: HistogramSpec,
                          dspec: DivergenceSpec) -> UncertaintyMap:
    """Max divergence between the lowest-mean class histogram and every
    other class, reoriented like divergence_map_top2."""
    return _divergence_map(s, hspec, dspec, True, "divergence-maxall")


def quantile_mask_values(values: np.ndarray, keep_fraction: float) -> np.ndarray:
    """0/1 array keeping exactly floor(fraction * n) lowest values;
    ties broken toward the lower index."""
    keep = int(np.floor(keep_fraction * values.size))
    order = np.argsort(values, kind="stable")
    mask = np.zeros(values.size)
    mask[order[:keep]] = 1.0
    return mask


def certainty_mask(u: UncertaintyMap, policy: MaskPolicy) -> ScalarVolume:
    """0/1 mask of the voxels the policy deems certain."""
    values = u.u.values
    if policy.mode == ABSOLUTE:
        mask = (values < policy.threshold).astype(np.float64)
        return ScalarVolume(u.shape, mask)
    return ScalarVolume(u.shape,
                        quantile_mask_values(values, policy.keep_fraction))


def rank_correlation(a: UncertaintyMap, b: UncertaintyMap) -> float:
    """Spearman rank correlation of two maps, average-rank tie handling."""
    if a.shape.dims != b.shape.dims:
        raise ValueError(
            f"shape mismatch: {a.shape.dims} vs {b.shape.dims}"
        )
    rho = stats.spearmanr(a.u.values, b.u.values).statistic
    return float(rho)
