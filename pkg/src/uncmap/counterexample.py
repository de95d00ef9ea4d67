"""Three-scenario stress test separating entropy from divergence gating.

Each scenario is a single voxel observed under T stochastic passes.  A pass
draws one value per class from a truncated-to-[0,1] Gaussian and projects
the vector onto the simplex by dividing by its sum.  The three scenarios
share class 4 as the winner:

* left:   winner well separated from the runners-up, moderate spread;
* middle: the top two classes heavily overlapping;
* right:  the same means as middle with the spreads scaled by 0.2.

Entropy depends only on the mean prediction, so it scores left as *more*
uncertain than middle and cannot tell middle from right.  The top-2
histogram divergence gets both orderings right.  Three boolean verdicts
pin that down:

* V1: entropy(middle) < entropy(left);
* V2: divergence uncertainty(middle) > divergence uncertainty(left);
* V3: entropy(middle) and entropy(right) agree within 3% of ln(C) while
  the divergence uncertainties differ by more than 5% of the raw-map max.

The three voxels are evaluated as one map so the divergence reorientation
u = M - D uses a scale shared across scenarios.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .divergences import ALPHA, DivergenceSpec
from .histograms import HistogramSpec
from .uncertainty import UncertaintyMap, divergence_map_top2, entropy_map
from .volume import SampleStack, Shape, stack_from_array

SCENARIO_CLASSES = 4
DEFAULT_PASSES = 1000
DEFAULT_SEED = 7

# Fractions of ln(C) resp. the raw-map max M.  The entropy band must absorb
# more than T = 1000 sampling noise: truncating the class-1 Gaussian (mean
# 0.05, std 0.05) at zero shifts its mean by about +0.014 in the middle
# scenario but not in the right one, which leaves a systematic entropy gap
# of roughly 0.025 between the two.  0.03 * ln(C) covers bias plus noise.
ENTROPY_MATCH_FRACTION = 0.03
DIVERGENCE_GAP_FRACTION = 0.05

# Bounded divergence by default: with the Hellinger-type alpha = 0.5 the
# raw map max cannot blow up to -log(eps) on disjoint histograms, which
# keeps the V3 gap threshold 0.05 * M commensurate with real overlap
# differences between the middle and right scenarios.
DEFAULT_DIVERGENCE = DivergenceSpec(kind=ALPHA, alpha=0.5)

_REJECTION_ROUNDS = 1000


@dataclass(frozen=True)
class Scenario:
    """Per-class truncated-Gaussian sampler for one synthetic voxel."""

    name: str
    per_class: tuple[tuple[float, float], ...]
    passes: int = DEFAULT_PASSES
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if len(self.per_class) != SCENARIO_CLASSES:
            raise ValueError(f"scenarios use {SCENARIO_CLASSES} classes")
        for mean, std in self.per_class:
            if not 0.0 <= mean <= 1.0 or std < 0.0:
                raise ValueError(f"bad (mean, std) = ({mean}, {std})")
        if self.passes < 2:
            raise ValueError("need at least 2 passes")

    @property
    def classes(self) -> int:
        return len(self.per_class)

    @property
    def means(self) -> tuple[float, ...]:
        return tuple(m for m, _ in self.per_class)

    @property
    def stds(self) -> tuple[float, ...]:
        return tuple(s for _, s in self.per_class)


def build_scenarios() -> tuple[Scenario, Scenario, Scenario]:
    """The fixed left / middle / right scenario trio."""
    left = Scenario(
        "left", ((0.10, 0.04), (0.15, 0.04), (0.20, 0.04), (0.55, 0.04))
    )
    middle = Scenario(
        "middle", ((0.05, 0.05), (0.10, 0.05), (0.40, 0.05), (0.45, 0.05))
    )
    right = Scenario(
        "right", tuple((m, 0.2 * s) for m, s in middle.per_class)
    )
    return left, middle, right


def _truncated_normal(rng, mean, std, size) -> np.ndarray:
    """Gaussian draws restricted to [0, 1] by rejection."""
    out = rng.normal(mean, std, size=size)
    if std == 0.0:
        return np.clip(out, 0.0, 1.0)
    for _ in range(_REJECTION_ROUNDS):
        bad = (out < 0.0) | (out > 1.0)
        n_bad = int(bad.sum())
        if not n_bad:
            return out
        out[bad] = rng.normal(mean, std, size=n_bad)
    raise RuntimeError(
        f"truncated sampler did not converge for mean={mean}, std={std}"
    )


def sample_scenario(scenario: Scenario, rng) -> np.ndarray:
    """(passes, classes) simplex samples for one scenario."""
    raw = np.empty((scenario.passes, scenario.classes))
    for c, (mean, std) in enumerate(scenario.per_class):
        raw[:, c] = _truncated_normal(rng, mean, std, scenario.passes)
    sums = raw.sum(axis=1, keepdims=True)
    if np.any(sums <= 0.0):
        raise RuntimeError("degenerate all-zero sample vector")
    return raw / sums


def scenario_stack(scenarios, passes: int, seed: int) -> SampleStack:
    """One stack holding each scenario as a voxel, in the order given."""
    scenarios = [replace(s, passes=passes, seed=seed) for s in scenarios]
    rng = np.random.default_rng(seed)
    samples = np.stack(
        [sample_scenario(s, rng) for s in scenarios], axis=1
    )  # (T, n_scenarios, C)
    return stack_from_array(samples, Shape((1, len(scenarios))))


@dataclass(frozen=True, eq=False)
class VerdictReport:
    """Scenario uncertainties and the three boolean verdicts."""

    scenarios: tuple[Scenario, ...]
    entropy: dict[str, float]
    divergence_raw: dict[str, float]
    divergence_uncertainty: dict[str, float]
    raw_max: float
    max_entropy: float
    verdicts: dict[str, bool]
    passes: int
    seed: int
    estimator: dict
    entropy_map: UncertaintyMap
    divergence_map: UncertaintyMap

    @property
    def all_hold(self) -> bool:
        return all(self.verdicts.values())

    def to_json_dict(self) -> dict:
        return {
            "scenarios": {
                s.name: {"means": list(s.means), "stds": list(s.stds)}
                for s in self.scenarios
            },
            "entropy": self.entropy,
            "divergence_raw": self.divergence_raw,
            "divergence_uncertainty": self.divergence_uncertainty,
            "raw_max": self.raw_max,
            "max_entropy": self.max_entropy,
            "verdicts": self.verdicts,
            "all_hold": self.all_hold,
            "passes": self.passes,
            "seed": self.seed,
            "estimator": self.estimator,
        }


def evaluate_scenarios(
    passes: int = DEFAULT_PASSES,
    hspec: HistogramSpec = HistogramSpec(),
    dspec: DivergenceSpec = DEFAULT_DIVERGENCE,
    seed: int = DEFAULT_SEED,
) -> VerdictReport:
    """Sample the scenario trio and decide the three verdicts."""
    if passes < 100:
        raise ValueError("need at least 100 passes for stable verdicts")
    trio = build_scenarios()
    stack = scenario_stack(trio, passes, seed)
    emap = entropy_map(stack)
    dmap = divergence_map_top2(stack, hspec, dspec)

    names = [s.name for s in trio]
    ent = dict(zip(names, emap.u.values.tolist()))
    raw = dict(zip(names, dmap.raw.values.tolist()))
    div_u = dict(zip(names, dmap.u.values.tolist()))
    m = dmap.estimator["raw_max"]
    ln_c = float(np.log(SCENARIO_CLASSES))

    verdicts = {
        "V1": ent["middle"] < ent["left"],
        "V2": div_u["middle"] > div_u["left"],
        "V3": (
            abs(ent["middle"] - ent["right"]) <= ENTROPY_MATCH_FRACTION * ln_c
            and abs(div_u["middle"] - div_u["right"])
            > DIVERGENCE_GAP_FRACTION * m
        ),
    }
    return VerdictReport(
        scenarios=trio,
        entropy=ent,
        divergence_raw=raw,
        divergence_uncertainty=div_u,
        raw_max=m,
        max_entropy=ln_c,
        verdicts=verdicts,
        passes=passes,
        seed=seed,
        estimator=dmap.estimator,
        entropy_map=emap,
        divergence_map=dmap,
    )
