"""Voxel-wise uncertainty maps from stochastic softmax predictions."""

__version__ = "0.1.0"

from .divergences import (
    DivergenceSpec,
    alpha_divergence,
    bhattacharyya,
    entropy_of,
)
from .histograms import ClassHistogramSet, HistogramSpec, build_histograms, top2
from .uncertainty import (
    MaskPolicy,
    UncertaintyMap,
    certainty_mask,
    divergence_map_maxall,
    divergence_map_top2,
    entropy_map,
    rank_correlation,
)
from .volume import (
    LabelVolume,
    ProbVolume,
    SampleStack,
    ScalarVolume,
    Shape,
    mean_prediction,
    validate_simplex,
)

__all__ = [
    "ClassHistogramSet",
    "DivergenceSpec",
    "HistogramSpec",
    "LabelVolume",
    "MaskPolicy",
    "ProbVolume",
    "SampleStack",
    "ScalarVolume",
    "Shape",
    "UncertaintyMap",
    "__version__",
    "alpha_divergence",
    "bhattacharyya",
    "build_histograms",
    "certainty_mask",
    "divergence_map_maxall",
    "divergence_map_top2",
    "entropy_map",
    "entropy_of",
    "mean_prediction",
    "rank_correlation",
    "top2",
    "validate_simplex",
]
