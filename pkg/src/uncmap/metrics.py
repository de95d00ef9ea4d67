"""Multi-class segmentation metrics: Dice, Jaccard, HD95 and ASD.

Surfaces are boundary voxels of a class mask: voxels of the mask with at
least one face-adjacent neighbor outside the mask or outside the volume
(4-connectivity in 2-D, 6-connectivity in 3-D).  Distances are Euclidean
in voxel units, spacing assumed isotropic 1.0.  HD95 is the 95th
percentile (linear interpolation) of the pooled symmetric distance set
{d(a, S_B)} u {d(b, S_A)}; ASD is the mean of the same pooled set, which
makes both quantities symmetric in (pred, gt) by construction.

Empty-mask conventions: dice = jaccard = 1 when a class is absent from
both volumes, 0 when absent from exactly one; surface distances are
undefined for empty masks and flagged instead of raised.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .volume import LabelVolume

HD_PERCENTILE = 95.0

STATUS_OK = "ok"
STATUS_EMPTY = "empty-mask"


@dataclass(frozen=True)
class ClassMetrics:
    label: int
    dice: float
    jaccard: float
    hd95: float | None
    asd: float | None
    status: str = STATUS_OK


@dataclass(frozen=True)
class MetricReport:
    """Per-class metrics plus their mean over classes.

    Classes flagged empty contribute dice/jaccard but are excluded from the
    surface-distance means; the flags are repeated in ``warnings``.
    """

    per_class: tuple[ClassMetrics, ...]
    mean_dice: float
    mean_jaccard: float
    mean_hd95: float | None
    mean_asd: float | None
    warnings: tuple[str, ...] = field(default=())

    def to_json_dict(self) -> dict:
        return {
            "per_class": [
                {
                    "class": m.label,
                    "dice": m.dice,
                    "jaccard": m.jaccard,
                    "hd95": m.hd95,
                    "asd": m.asd,
                    "status": m.status,
                }
                for m in self.per_class
            ],
            "mean": {
                "dice": self.mean_dice,
                "jaccard": self.mean_jaccard,
                "hd95": self.mean_hd95,
                "asd": self.mean_asd,
            },
            "warnings": list(self.warnings),
        }


def _class_masks(pred: LabelVolume, gt: LabelVolume, c: int):
    if pred.shape.dims != gt.shape.dims:
        raise ValueError(
            f"shape mismatch: {pred.shape.dims} vs {gt.shape.dims}"
        )
    return pred.grid() == c, gt.grid() == c


def dice_jaccard(pred: LabelVolume, gt: LabelVolume,
                 c: int) -> tuple[float, float]:
    """Overlap scores of class c between two label volumes."""
    a, b = _class_masks(pred, gt, c)
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 and nb == 0:
        return 1.0, 1.0
    inter = int(np.logical_and(a, b).sum())
    dice = 2.0 * inter / (na + nb)
    jaccard = inter / (na + nb - inter)
    return dice, jaccard


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """(n, rank) coordinates of the boundary voxels of a boolean mask."""
    boundary = np.zeros(mask.shape, dtype=bool)
    lower, upper = slice(None, -1), slice(1, None)
    for axis in range(mask.ndim):
        for here, there in ((upper, lower), (lower, upper)):
            dst = [slice(None)] * mask.ndim
            src = [slice(None)] * mask.ndim
            dst[axis], src[axis] = here, there
            # volume edge counts as outside, so the untouched slice at the
            # start/end of the axis stays exposed
            neighbor_outside = np.ones(mask.shape, dtype=bool)
            neighbor_outside[tuple(dst)] = ~mask[tuple(src)]
            boundary |= mask & neighbor_outside
    return np.argwhere(boundary)


def pooled_surface_distances(mask_a: np.ndarray,
                             mask_b: np.ndarray) -> np.ndarray:
    """Symmetric set of nearest-surface distances between two masks."""
    sa = surface_voxels(mask_a).astype(np.float64)
    sb = surface_voxels(mask_b).astype(np.float64)
    d_ab, _ = cKDTree(sb).query(sa)
    d_ba, _ = cKDTree(sa).query(sb)
    return np.concatenate([np.atleast_1d(d_ab), np.atleast_1d(d_ba)])


def surface_distances(pred: LabelVolume, gt: LabelVolume,
                      c: int) -> tuple[float, float] | None:
    """(hd95, asd) of class c, or None when either class mask is empty."""
    a, b = _class_masks(pred, gt, c)
    if not a.any() or not b.any():
        return None
    pooled = pooled_surface_distances(a, b)
    hd95 = float(np.percentile(pooled, HD_PERCENTILE))
    asd = float(pooled.mean())
    return hd95, asd


def evaluate_labels(pred: LabelVolume, gt: LabelVolume,
                    classes: int | None = None) -> MetricReport:
    """Full per-class report over classes 0..C-1 plus means."""
    if classes is None:
        classes = max(pred.classes, gt.classes)
    rows = []
    notes = []
    for c in range(classes):
        dice, jac = dice_jaccard(pred, gt, c)
        dists = surface_distances(pred, gt, c)
        if dists is None:
            rows.append(ClassMetrics(c, dice, jac, None, None, STATUS_EMPTY))
            notes.append(
                f"class {c}: empty mask, surface distances undefined"
            )
        else:
            rows.append(ClassMetrics(c, dice, jac, dists[0], dists[1]))
    for note in notes:
        warnings.warn(note, stacklevel=2)
    with_dist = [m for m in rows if m.status == STATUS_OK]
    return MetricReport(
        per_class=tuple(rows),
        mean_dice=float(np.mean([m.dice for m in rows])),
        mean_jaccard=float(np.mean([m.jaccard for m in rows])),
        mean_hd95=(
            float(np.mean([m.hd95 for m in with_dist])) if with_dist else None
        ),
        mean_asd=(
            float(np.mean([m.asd for m in with_dist])) if with_dist else None
        ),
        warnings=tuple(notes),
    )
