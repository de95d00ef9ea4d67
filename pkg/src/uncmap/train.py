"""Mean-teacher trainer with pluggable uncertainty gating.

Each step draws a mixed batch (labeled + unlabeled images), runs one
perturbed student forward, and updates the student by SGD with momentum on

    L = L_supervised(labeled pixels) + lambda * L_consistency(all pixels)

where the consistency target is a perturbed teacher forward and the
consistency mask comes from the chosen uncertainty estimator applied to a
T-pass Monte-Carlo stack of the teacher (fresh dropout and input noise per
pass).  The teacher follows the student as an exponential moving average;
it is never touched by gradients.

All randomness flows from one 64-bit seed through numpy's PCG64 generator,
split into independent named streams with SeedSequence.spawn, so runs are
bit-reproducible; the generator identity is recorded in the report.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .divergences import ALPHA, BHATTACHARYYA, DEFAULT_EPSILON, DivergenceSpec
from .histograms import HistogramSpec
from .losses import consistency_loss_arrays, supervised_loss_arrays
from .metrics import dice_jaccard
from .model import PixelModel
from .simtask import Dataset, SyntheticTask, generate_dataset
from .uncertainty import (
    MaskPolicy,
    divergence_scores,
    entropy_scores,
    quantile_mask_values,
)
from .volume import LabelVolume, SampleStack, Shape, stack_from_array

PRNG_IDENTITY = "numpy-pcg64/seedsequence"

ESTIMATOR_NONE = "none"
ESTIMATOR_ENTROPY = "entropy"
ESTIMATORS = (ESTIMATOR_NONE, ESTIMATOR_ENTROPY, "bhattacharyya",
              "alpha05", "alpha20")

MAX_EPOCHS = 200


def divergence_for_estimator(name: str,
                             eps: float = DEFAULT_EPSILON) -> DivergenceSpec:
    if name == "bhattacharyya":
        return DivergenceSpec(kind=BHATTACHARYYA, epsilon_floor=eps)
    if name == "alpha05":
        return DivergenceSpec(kind=ALPHA, alpha=0.5, epsilon_floor=eps)
    if name == "alpha20":
        return DivergenceSpec(kind=ALPHA, alpha=2.0, epsilon_floor=eps)
    raise ValueError(f"{name!r} is not a divergence estimator")


@dataclass(frozen=True)
class TrainConfig:
    estimator: str = "bhattacharyya"
    lambda_consistency: float = 15.0
    ema_decay: float = 0.99
    lr_initial: float = 1e-3
    lr_halve_every: int = 15
    momentum: float = 0.9
    epochs: int = 60
    batch_size: int = 6
    passes: int = 8
    dropout_rate: float = 0.3
    input_noise_std: float = 0.05
    hidden: int = 16
    bins: int = 10
    epsilon_floor: float = DEFAULT_EPSILON
    keep_fraction: float = 0.75
    mask_threshold: float | None = None  # switches mask to absolute mode

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(
                f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}"
            )
        if not 0 < self.epochs <= MAX_EPOCHS:
            raise ValueError(f"epochs must lie in [1, {MAX_EPOCHS}]")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")
        if self.batch_size < 2 or self.passes < 2:
            raise ValueError("batch_size and passes must be >= 2")

    def mask_policy(self) -> MaskPolicy:
        if self.mask_threshold is not None:
            return MaskPolicy(mode="absolute", threshold=self.mask_threshold)
        return MaskPolicy(keep_fraction=self.keep_fraction)


@dataclass
class TrainState:
    """Mutable optimizer state; the teacher only ever moves by EMA."""

    model: PixelModel
    student: np.ndarray
    teacher: np.ndarray
    velocity: np.ndarray
    step: int = 0


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    mean_dice: float
    per_class_dice: tuple[float, ...]
    supervised_loss: float
    consistency_loss: float
    retained_fraction: float


@dataclass(frozen=True)
class RunReport:
    config: dict
    epochs: tuple[EpochStats, ...]
    final_mean_dice: float
    final_mean_jaccard: float
    final_per_class_dice: tuple[float, ...]
    final_teacher_mean_dice: float

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "final": {
                "mean_dice": self.final_mean_dice,
                "mean_jaccard": self.final_mean_jaccard,
                "per_class_dice": list(self.final_per_class_dice),
                "teacher_mean_dice": self.final_teacher_mean_dice,
            },
            "epochs": [dataclasses.asdict(e) for e in self.epochs],
        }

    def percurve_rows(self):
        """(header, rows) for the per-epoch CSV curve."""
        n_classes = len(self.final_per_class_dice)
        header = ["epoch", "lr", "mean_dice"] + [
            f"dice_class_{c}" for c in range(n_classes)
        ] + ["supervised_loss", "consistency_loss", "retained_fraction"]
        rows = [
            [e.epoch, e.lr, e.mean_dice, *e.per_class_dice,
             e.supervised_loss, e.consistency_loss, e.retained_fraction]
            for e in self.epochs
        ]
        return header, rows


def ema_update(theta_t: np.ndarray, theta_s: np.ndarray,
               decay: float) -> np.ndarray:
    """decay * teacher + (1 - decay) * student, elementwise."""
    if theta_t.shape != theta_s.shape:
        raise ValueError(
            f"dimension mismatch: {theta_t.shape} vs {theta_s.shape}"
        )
    if not 0.0 <= decay < 1.0:
        raise ValueError(f"decay must lie in [0, 1), got {decay}")
    return decay * theta_t + (1.0 - decay) * theta_s


def perturb_features(features: np.ndarray, noise_std: float,
                     rng) -> np.ndarray:
    """Gaussian noise on the intensity channel; coordinates untouched."""
    if noise_std == 0.0:
        return features
    out = features.copy()
    out[:, 0] += rng.normal(0.0, noise_std, size=out.shape[0])
    return out


def _mc_samples(model: PixelModel, params: np.ndarray, features: np.ndarray,
                passes: int, noise_std: float, dropout_rate: float,
                rng) -> np.ndarray:
    """(passes, n_rows, classes) stochastic forward passes."""
    n = features.shape[0]
    samples = np.empty((passes, n, model.classes))
    noise = (rng.normal(0.0, noise_std, size=(passes, n))
             if noise_std > 0.0 else None)
    if dropout_rate > 0.0:
        keep = 1.0 - dropout_rate
        drops = (rng.random((passes, n, model.hidden)) < keep) / keep
    for t in range(passes):
        x = features
        if noise is not None:
            x = features.copy()
            x[:, 0] += noise[t]
        mask = drops[t] if dropout_rate > 0.0 else None
        samples[t], _ = model.forward(params, x, dropout_mask=mask)
    return samples


def mc_inference(model: PixelModel, teacher: np.ndarray,
                 features: np.ndarray, shape: Shape, passes: int,
                 noise_std: float, dropout_rate: float,
                 seed: int) -> SampleStack:
    """T stochastic teacher passes; fresh noise and dropout each pass."""
    if passes < 2:
        raise ValueError("need at least 2 passes")
    rng = np.random.default_rng(seed)
    samples = _mc_samples(model, teacher, features, passes, noise_std,
                          dropout_rate, rng)
    return stack_from_array(samples, shape)


def _uncertainty_masks(samples: np.ndarray, n_images: int, n_pix: int,
                       config: TrainConfig) -> np.ndarray:
    """Per-image certainty masks from one batched (T, N, C) MC sweep.

    Entropy scores already point uncertainty-up; divergence scores point
    separation-up and are reoriented per image as u = max - score before
    masking, matching the map-level convention.
    """
    if config.estimator == ESTIMATOR_ENTROPY:
        u_all = entropy_scores(samples)
    else:
        u_all = -divergence_scores(
            samples,
            HistogramSpec(bins=config.bins),
            divergence_for_estimator(config.estimator, config.epsilon_floor),
        )
    policy = config.mask_policy()
    mask = np.empty(n_images * n_pix)
    for i in range(n_images):
        sl = slice(i * n_pix, (i + 1) * n_pix)
        u = u_all[sl]
        if config.estimator != ESTIMATOR_ENTROPY:
            u = u - u.min()  # negated scores shifted to u = max - score
        if policy.mode == "absolute":
            mask[sl] = (u < policy.threshold).astype(np.float64)
        else:
            mask[sl] = quantile_mask_values(u, policy.keep_fraction)
    return mask


def _evaluate(model, params, images, shape, classes):
    """Mean and per-class dice plus mean jaccard over a split."""
    dice_acc = np.zeros(classes)
    jac_acc = np.zeros(classes)
    for img in images:
        probs = model.predict(params, img.features)
        pred = LabelVolume(shape, classes,
                           probs.argmax(axis=1).astype(np.int32))
        gt = LabelVolume(shape, classes, img.labels)
        for c in range(classes):
            d, j = dice_jaccard(pred, gt, c)
            dice_acc[c] += d
            jac_acc[c] += j
    dice_acc /= len(images)
    jac_acc /= len(images)
    return float(dice_acc.mean()), tuple(dice_acc), float(jac_acc.mean())


def train(task: SyntheticTask, config: TrainConfig, seed: int,
          dataset: Dataset | None = None) -> RunReport:
    """Run the full training loop; deterministic in (task, config, seed)."""
    data = generate_dataset(task) if dataset is None else dataset
    shape = task.shape
    n_pix = shape.nvoxels
    classes = task.classes

    root = np.random.SeedSequence(seed)
    s_init, s_batch, s_student, s_teacher, s_mc = root.spawn(5)
    rng_init = np.random.default_rng(s_init)
    rng_batch = np.random.default_rng(s_batch)
    rng_student = np.random.default_rng(s_student)
    rng_teacher = np.random.default_rng(s_teacher)
    mc_rng = np.random.default_rng(s_mc)

    model = PixelModel(classes=classes, hidden=config.hidden)
    student = model.init_params(rng_init)
    state = TrainState(model, student, student.copy(),
                       np.zeros_like(student))

    n_lab_batch = min(len(data.labeled), max(1, config.batch_size // 2))
    n_unl_batch = max(1, config.batch_size - n_lab_batch)
    steps_per_epoch = max(1, -(-len(data.unlabeled) // n_unl_batch))

    lab_features = np.concatenate(
        [img.features for img in data.labeled[:n_lab_batch]]
    )
    lab_labels = np.concatenate(
        [img.labels for img in data.labeled[:n_lab_batch]]
    )

    epoch_stats = []
    for epoch in range(config.epochs):
        lr = config.lr_initial * 0.5 ** (epoch // config.lr_halve_every)
        order = rng_batch.permutation(len(data.unlabeled))
        sup_total = cons_total = kept_total = 0.0
        for step in range(steps_per_epoch):
            picks = order[(step * n_unl_batch) % len(order):][:n_unl_batch]
            if picks.size < n_unl_batch:  # wrap at the epoch tail
                picks = np.concatenate([picks, order[:n_unl_batch - picks.size]])
            unl_features = np.concatenate(
                [data.unlabeled[i].features for i in picks]
            )
            mixed = np.concatenate([lab_features, unl_features])

            x_student = perturb_features(mixed, config.input_noise_std,
                                         rng_student)
            drop_s = model.dropout_mask(rng_student, x_student.shape[0],
                                        config.dropout_rate)
            probs_s, cache = model.forward(state.student, x_student,
                                           dropout_mask=drop_s)

            sup_val, d_logits_sup = supervised_loss_arrays(
                probs_s[: lab_labels.size], lab_labels
            )

            if config.lambda_consistency != 0.0:
                x_teacher = perturb_features(mixed, config.input_noise_std,
                                             rng_teacher)
                drop_t = model.dropout_mask(rng_teacher, x_teacher.shape[0],
                                            config.dropout_rate)
                probs_t, _ = model.forward(state.teacher, x_teacher,
                                           dropout_mask=drop_t)
                n_images = n_lab_batch + n_unl_batch
                if config.estimator == ESTIMATOR_NONE:
                    mask = np.ones(n_images * n_pix)
                else:
                    # one batched MC sweep, then per-image masks
                    samples = _mc_samples(
                        model, state.teacher, mixed, config.passes,
                        config.input_noise_std, config.dropout_rate,
                        mc_rng,
                    )
                    mask = _uncertainty_masks(samples, n_images, n_pix,
                                              config)
                # per-image masked mean, then averaged over the batch
                cons_val = 0.0
                d_logits_cons = np.zeros_like(probs_s)
                for i in range(n_images):
                    sl = slice(i * n_pix, (i + 1) * n_pix)
                    v, g = consistency_loss_arrays(
                        probs_t[sl], probs_s[sl], mask[sl]
                    )
                    cons_val += v / n_images
                    d_logits_cons[sl] = g / n_images
                kept_total += float(mask.mean())
            else:
                cons_val = 0.0
                d_logits_cons = np.zeros_like(probs_s)
                kept_total += 1.0

            d_logits = d_logits_cons * config.lambda_consistency
            d_logits[: lab_labels.size] += d_logits_sup
            grad = model.backward(cache, d_logits)
            if not np.all(np.isfinite(grad)):
                raise RuntimeError(
                    f"non-finite gradient at epoch {epoch} step {step}; "
                    f"sup={sup_val:.4g} cons={cons_val:.4g}"
                )
            state.velocity = config.momentum * state.velocity + grad
            state.student = state.student - lr * state.velocity
            state.teacher = ema_update(state.teacher, state.student,
                                       config.ema_decay)
            state.step += 1
            sup_total += sup_val
            cons_total += cons_val

        mean_dice, per_class, _ = _evaluate(
            model, state.student, data.test, shape, classes
        )
        epoch_stats.append(EpochStats(
            epoch=epoch,
            lr=lr,
            mean_dice=mean_dice,
            per_class_dice=per_class,
            supervised_loss=sup_total / steps_per_epoch,
            consistency_loss=cons_total / steps_per_epoch,
            retained_fraction=kept_total / steps_per_epoch,
        ))

    mean_dice, per_class, mean_jac = _evaluate(
        model, state.student, data.test, shape, classes
    )
    teacher_dice, _, _ = _evaluate(
        model, state.teacher, data.test, shape, classes
    )
    config_dict = dataclasses.asdict(config)
    config_dict.update(
        seed=seed,
        prng=PRNG_IDENTITY,
        task=dataclasses.asdict(task),
        steps_per_epoch=steps_per_epoch,
        labeled_per_batch=n_lab_batch,
        unlabeled_per_batch=n_unl_batch,
    )
    return RunReport(
        config=config_dict,
        epochs=tuple(epoch_stats),
        final_mean_dice=mean_dice,
        final_mean_jaccard=mean_jac,
        final_per_class_dice=per_class,
        final_teacher_mean_dice=teacher_dice,
    )
