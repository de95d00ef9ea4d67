"""Training losses with analytic gradients taken at the logits.

Supervised loss: pixel-mean cross-entropy plus soft-Dice (equal weights).
Soft Dice per class is 2*sum(p*g) / (sum(p) + sum(g) + eps) with
eps = 1e-6, averaged over classes; the Dice loss is one minus that mean.

Consistency loss: squared L2 distance between teacher and student class
vectors, averaged over the voxels an 0/1 certainty mask keeps, normalized
by the kept-voxel count.  An all-zero mask defines the loss (and its
gradient) as zero rather than 0/0.

Both return gradients with respect to the *student* logits; probabilities
are assumed to be softmax outputs, so the softmax Jacobian is folded in.
"""

from __future__ import annotations

import numpy as np

from .volume import LabelVolume, ProbVolume, ScalarVolume

DICE_EPSILON = 1e-6
_LOG_FLOOR = 1e-300


def _softmax_chain(probs: np.ndarray, d_probs: np.ndarray) -> np.ndarray:
    """Pull a gradient at the probabilities back to the logits."""
    inner = (d_probs * probs).sum(axis=1, keepdims=True)
    return probs * (d_probs - inner)


def supervised_loss_arrays(probs: np.ndarray, labels: np.ndarray):
    """(value, d_logits) for the CE + soft-Dice objective."""
    n, c = probs.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got {labels.shape}")
    one_hot = np.zeros((n, c))
    one_hot[np.arange(n), labels] = 1.0

    picked = probs[np.arange(n), labels]
    ce = float(-np.log(np.maximum(picked, _LOG_FLOOR)).mean())
    d_logits_ce = (probs - one_hot) / n

    inter = (probs * one_hot).sum(axis=0)
    denom = probs.sum(axis=0) + one_hot.sum(axis=0) + DICE_EPSILON
    dice = 2.0 * inter / denom
    dice_loss = float(1.0 - dice.mean())
    # d(dice_c)/d(p_ic) = 2 g_ic / denom_c - 2 inter_c / denom_c^2
    d_probs = -(2.0 * one_hot / denom - 2.0 * inter / denom**2) / c
    d_logits_dice = _softmax_chain(probs, d_probs)

    return ce + dice_loss, d_logits_ce + d_logits_dice


def consistency_loss_arrays(p_teacher: np.ndarray, p_student: np.ndarray,
                            mask: np.ndarray):
    """(value, d_student_logits) for the masked mean squared error."""
    if p_teacher.shape != p_student.shape:
        raise ValueError(
            f"shape mismatch: {p_teacher.shape} vs {p_student.shape}"
        )
    if mask.shape != (p_teacher.shape[0],):
        raise ValueError("mask must have one entry per voxel")
    kept = float(mask.sum())
    if kept == 0.0:
        return 0.0, np.zeros_like(p_student)
    diff = p_teacher - p_student
    value = float((mask * (diff**2).sum(axis=1)).sum() / kept)
    d_probs = -2.0 * diff * mask[:, None] / kept
    return value, _softmax_chain(p_student, d_probs)


def supervised_loss(pred: ProbVolume, gt: LabelVolume):
    """Volume-typed wrapper around supervised_loss_arrays."""
    if pred.shape.dims != gt.shape.dims:
        raise ValueError(f"shape mismatch: {pred.shape.dims} vs {gt.shape.dims}")
    if pred.classes != gt.classes:
        raise ValueError(f"class mismatch: {pred.classes} vs {gt.classes}")
    return supervised_loss_arrays(pred.class_matrix(), gt.labels)


def consistency_loss(p_teacher: ProbVolume, p_student: ProbVolume,
                     mask: ScalarVolume):
    """Volume-typed wrapper around consistency_loss_arrays."""
    if (p_teacher.shape.dims != p_student.shape.dims
            or p_teacher.shape.dims != mask.shape.dims):
        raise ValueError("teacher, student and mask shapes must agree")
    if p_teacher.classes != p_student.classes:
        raise ValueError(
            f"class mismatch: {p_teacher.classes} vs {p_student.classes}"
        )
    return consistency_loss_arrays(
        p_teacher.class_matrix(), p_student.class_matrix(), mask.values
    )
