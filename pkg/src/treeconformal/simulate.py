"""Synthetic multi-label data: two mixture features, chained logistic labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import MultiLabelDataset

# (weight of first component, (mean, variance), (mean, variance))
X1_MIXTURE = (0.5, (1.0, 0.3), (0.0, 1.0))
X2_MIXTURE = (0.3, (-0.5, 0.2), (-np.sqrt(1.5), 0.4))


@dataclass(frozen=True)
class SimConfig:
    n: int = 10_000
    c: int = 5
    beta: tuple = (2.0, 2.5, 2.0)
    w: float = 1.5
    seed: int = 0
    later_noise: bool = True

    def __post_init__(self):
        if self.n < 1 or self.c < 1:
            raise ValueError("n and c must be positive")
        if len(self.beta) != 3:
            raise ValueError("beta needs an intercept and two slopes")


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def mixture_moments(spec) -> tuple[float, float]:
    """Mean and variance of a two-component normal mixture."""
    w, (m1, v1), (m2, v2) = spec
    mean = w * m1 + (1 - w) * m2
    second = w * (v1 + m1 ** 2) + (1 - w) * (v2 + m2 ** 2)
    return mean, second - mean ** 2


def _draw_mixture(rng, n, spec):
    w, (m1, v1), (m2, v2) = spec
    first = rng.random(n) < w
    z = rng.standard_normal(n)
    return np.where(first, m1 + np.sqrt(v1) * z, m2 + np.sqrt(v2) * z)


def gen_features(n: int, seed=0) -> np.ndarray:
    """(n, 2) features; mixture second parameters are variances."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x1 = _draw_mixture(rng, n, X1_MIXTURE)
    x2 = _draw_mixture(rng, n, X2_MIXTURE)
    return np.column_stack([x1, x2])


def gen_labels(X, cfg: SimConfig, rng=None) -> np.ndarray:
    """Sequential Bernoulli labels.

    Label ``j`` has logit ``b0 + b1*x1 + b2*x2 + w * (labels before j) + eps``
    with ``eps = -0.5 * x1**3`` (dropped for j > 1 when `later_noise` is off).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError("simulation labels need exactly two features")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    b0, b1, b2 = cfg.beta
    base = b0 + b1 * X[:, 0] + b2 * X[:, 1]
    eps = -0.5 * X[:, 0] ** 3
    Y = np.zeros((len(X), cfg.c), dtype=np.uint8)
    running = np.zeros(len(X))
    for j in range(cfg.c):
        z = base + cfg.w * running + (eps if j == 0 or cfg.later_noise else 0.0)
        Y[:, j] = rng.random(len(X)) < sigmoid(z)
        running += Y[:, j]
    return Y


def gen_dataset(cfg: SimConfig) -> MultiLabelDataset:
    rng = np.random.default_rng(cfg.seed)
    X = gen_features(cfg.n, rng)
    return MultiLabelDataset(X, gen_labels(X, cfg, rng))
