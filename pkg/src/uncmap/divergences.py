"""Statistical distances between discrete mass vectors.

Bhattacharyya divergence: -log sum_k sqrt(p_k q_k), with the coefficient
floored at eps so disjoint supports give -log(eps) instead of infinity.

Alpha divergence (Tsallis closed form):
    D_a(p||q) = (1 - sum_k p_k^a q_k^(1-a)) / (1 - a)
For a > 1 the q entries that would be raised to a negative power are
floored at eps first (same for p when a < 0); empty histogram bins are
expected inputs here, not errors.  At a = 1 (within 1e-6) the removable
singularity is replaced by its analytic limit, KL(p||q).  a = 0.5 is twice
the squared Hellinger distance, a = 2 the Pearson chi-square.

All logarithms are natural, so the entropy of a C-class simplex vector is
at most ln(C).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_EPSILON = 1e-12
MAX_EPSILON = 1e-6
ALPHA_KL_WINDOW = 1e-6
_SIMPLEX_TOL = 1e-6

BHATTACHARYYA = "bhattacharyya"
ALPHA = "alpha"


def _as_pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("mass vectors must be nonnegative")
    return p, q


def bhattacharyya_rows(p: np.ndarray, q: np.ndarray, eps: float) -> np.ndarray:
    """Row-wise Bhattacharyya divergence of two (..., K) arrays."""
    coeff = np.sqrt(p * q).sum(axis=-1)
    return -np.log(np.maximum(coeff, eps))


def alpha_rows(p: np.ndarray, q: np.ndarray, alpha: float,
               eps: float) -> np.ndarray:
    """Row-wise alpha divergence of two (..., K) arrays."""
    if abs(alpha - 1.0) <= ALPHA_KL_WINDOW:
        ratio = p / np.maximum(q, eps)
        terms = np.where(p > 0, p * np.log(np.where(p > 0, ratio, 1.0)), 0.0)
        return terms.sum(axis=-1)
    if alpha > 1.0:
        q = np.maximum(q, eps)
    if alpha < 0.0:
        p = np.maximum(p, eps)
    total = (p ** alpha * q ** (1.0 - alpha)).sum(axis=-1)
    return (1.0 - total) / (1.0 - alpha)


def entropy_rows(mu: np.ndarray, eps: float) -> np.ndarray:
    """Row-wise Shannon entropy of (..., C) simplex arrays, natural log."""
    return -(mu * np.log(np.maximum(mu, eps))).sum(axis=-1)


def bhattacharyya(p, q, eps: float = DEFAULT_EPSILON) -> float:
    """Bhattacharyya divergence between two mass vectors.

    Symmetric, zero for identical inputs, -log(eps) for disjoint supports.
    """
    p, q = _as_pair(p, q)
    return float(bhattacharyya_rows(p, q, eps))


def alpha_divergence(p, q, alpha: float, eps: float = DEFAULT_EPSILON) -> float:
    """Alpha divergence of p from q; KL(p||q) at alpha = 1."""
    if not np.isfinite(alpha):
        raise ValueError("alpha must be finite")
    p, q = _as_pair(p, q)
    return float(alpha_rows(p, q, alpha, eps))


def entropy_of(mu, eps: float = DEFAULT_EPSILON) -> float:
    """Shannon entropy of one simplex vector (natural log)."""
    mu = np.asarray(mu, dtype=np.float64)
    if (abs(mu.sum() - 1.0) > _SIMPLEX_TOL or mu.min() < -_SIMPLEX_TOL
            or mu.max() > 1.0 + _SIMPLEX_TOL):
        raise ValueError("input is not a simplex vector")
    return float(entropy_rows(np.maximum(mu, 0.0), eps))


@dataclass(frozen=True)
class DivergenceSpec:
    """Which divergence to evaluate, with its numerical floor."""

    kind: str = BHATTACHARYYA
    alpha: float | None = None
    epsilon_floor: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.kind not in (BHATTACHARYYA, ALPHA):
            raise ValueError(f"unknown divergence kind {self.kind!r}")
        if self.kind == ALPHA:
            if self.alpha is None:
                raise ValueError("alpha is required for kind='alpha'")
        elif self.alpha is not None:
            raise ValueError("alpha only applies to kind='alpha'")
        if not 0.0 < self.epsilon_floor <= MAX_EPSILON:
            raise ValueError(
                f"epsilon_floor must lie in (0, {MAX_EPSILON}], "
                f"got {self.epsilon_floor}"
            )

    def evaluate(self, p, q) -> float:
        if self.kind == BHATTACHARYYA:
            return bhattacharyya(p, q, self.epsilon_floor)
        return alpha_divergence(p, q, self.alpha, self.epsilon_floor)

    def evaluate_rows(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        if self.kind == BHATTACHARYYA:
            return bhattacharyya_rows(p, q, self.epsilon_floor)
        return alpha_rows(p, q, self.alpha, self.epsilon_floor)

    def describe(self) -> dict:
        desc = {"divergence": self.kind, "epsilon_floor": self.epsilon_floor}
        if self.kind == ALPHA:
            desc["alpha"] = self.alpha
        return desc
