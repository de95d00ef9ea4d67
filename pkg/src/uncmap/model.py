"""Per-pixel two-layer softmax classifier with flat parameter vectors.

The whole parameter set lives in one float64 vector so the teacher EMA,
SGD momentum, and finite-difference checks are plain vector arithmetic.
Dropout is inverted (activations scaled by 1/keep at train time), so the
deterministic forward pass is the expectation of the stochastic one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_HIDDEN = 16


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class PixelModel:
    """Architecture descriptor; parameters are passed to each call."""

    classes: int
    in_features: int = 3
    hidden: int = DEFAULT_HIDDEN

    def __post_init__(self):
        if self.classes < 2 or self.hidden < 1 or self.in_features < 1:
            raise ValueError("bad architecture sizes")

    @property
    def n_params(self) -> int:
        return (self.hidden * self.in_features + self.hidden
                + self.classes * self.hidden + self.classes)

    def _views(self, params: np.ndarray):
        if params.shape != (self.n_params,):
            raise ValueError(
                f"expected a flat vector of {self.n_params} parameters"
            )
        h, f, c = self.hidden, self.in_features, self.classes
        i = 0
        w1 = params[i:i + h * f].reshape(h, f)
        i += h * f
        b1 = params[i:i + h]
        i += h
        w2 = params[i:i + c * h].reshape(c, h)
        i += c * h
        b2 = params[i:i + c]
        return w1, b1, w2, b2

    def init_params(self, rng) -> np.ndarray:
        """He-scaled random weights, zero biases."""
        h, f, c = self.hidden, self.in_features, self.classes
        params = np.zeros(self.n_params)
        w1, _, w2, _ = self._views(params)
        w1[:] = rng.normal(0.0, np.sqrt(2.0 / f), size=(h, f))
        w2[:] = rng.normal(0.0, np.sqrt(2.0 / h), size=(c, h))
        return params

    def dropout_mask(self, rng, n_rows: int, rate: float) -> np.ndarray:
        """Inverted-dropout multiplier for the hidden activations."""
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        if rate == 0.0:
            return np.ones((n_rows, self.hidden))
        keep = 1.0 - rate
        return (rng.random((n_rows, self.hidden)) < keep) / keep

    def forward(self, params: np.ndarray, x: np.ndarray,
                dropout_mask: np.ndarray | None = None):
        """Softmax probabilities plus the cache needed for backward."""
        w1, b1, w2, b2 = self._views(params)
        pre = x @ w1.T + b1
        hidden = np.maximum(pre, 0.0)
        dropped = hidden if dropout_mask is None else hidden * dropout_mask
        logits = dropped @ w2.T + b2
        probs = softmax(logits)
        cache = (x, pre, dropped, dropout_mask, w2)
        return probs, cache

    def backward(self, cache, d_logits: np.ndarray) -> np.ndarray:
        """Parameter gradient given dLoss/dlogits."""
        x, pre, dropped, dropout_mask, w2 = cache
        grad = np.empty(self.n_params)
        g_w1, g_b1, g_w2, g_b2 = self._views(grad)
        g_w2[:] = d_logits.T @ dropped
        g_b2[:] = d_logits.sum(axis=0)
        d_hidden = d_logits @ w2
        if dropout_mask is not None:
            d_hidden = d_hidden * dropout_mask
        d_pre = d_hidden * (pre > 0.0)
        g_w1[:] = d_pre.T @ x
        g_b1[:] = d_pre.sum(axis=0)
        return grad

    def predict(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Deterministic probabilities (no dropout, no noise)."""
        probs, _ = self.forward(params, x)
        return probs
