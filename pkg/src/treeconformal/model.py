"""Black-box classifiers used per tree layer and the nonconformity score."""

from __future__ import annotations

from typing import Protocol

import numpy as np
from scipy.special import logsumexp


class DegenerateModelError(ValueError):
    pass


class Classifier(Protocol):
    """Anything exposing fitted `classes_` and a row-stochastic `predict_proba`."""

    classes_: np.ndarray

    def predict_proba(self, X: np.ndarray) -> np.ndarray: ...


class GaussianNB:
    """Gaussian naive Bayes with a hard variance floor.

    Parameters
    ----------
    var_floor : float
        Lower bound on every per-class feature variance. Variances are
        population variances (divisor ``n_k``).
    """

    def __init__(self, var_floor: float = 1e-9):
        self.var_floor = var_floor
        self.classes_ = None
        self.prior_ = None
        self.mean_ = None
        self.var_ = None

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        classes, inverse = np.unique(y, return_inverse=True)
        if len(classes) < 2:
            raise DegenerateModelError("need at least two distinct classes")
        counts = np.bincount(inverse, minlength=len(classes)).astype(np.float64)
        means = np.zeros((len(classes), X.shape[1]))
        np.add.at(means, inverse, X)
        means /= counts[:, None]
        sq = np.zeros_like(means)
        np.add.at(sq, inverse, (X - means[inverse]) ** 2)
        self.classes_ = classes
        self.prior_ = counts / counts.sum()
        self.mean_ = means
        self.var_ = np.maximum(sq / counts[:, None], self.var_floor)
        return self

    def _joint_log_likelihood(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.mean_.shape[1]:
            raise ValueError(f"expected {self.mean_.shape[1]} features, got {X.shape[1]}")
        log_norm = -0.5 * np.log(2.0 * np.pi * self.var_).sum(axis=1)
        quad = np.empty((X.shape[0], len(self.classes_)))
        step = max(1, 2_000_000 // max(1, self.mean_.size))
        for s in range(0, X.shape[0], step):
            diff = X[s:s + step, None, :] - self.mean_[None, :, :]
            quad[s:s + step] = (diff ** 2 / self.var_[None, :, :]).sum(axis=2)
        return np.log(self.prior_) + log_norm - 0.5 * quad

    def predict_proba(self, X) -> np.ndarray:
        jll = self._joint_log_likelihood(X)
        return np.exp(jll - logsumexp(jll, axis=1, keepdims=True))

    def dump(self) -> str:
        """Plain-text key=value listing of the fitted parameters."""
        lines = [f"var_floor={self.var_floor!r}", f"n_classes={len(self.classes_)}",
                 f"n_features={self.mean_.shape[1]}"]
        for k, cls in enumerate(self.classes_):
            lines.append(f"class[{cls}].prior={self.prior_[k]!r}")
            lines.append(f"class[{cls}].mean={','.join(repr(float(v)) for v in self.mean_[k])}")
            lines.append(f"class[{cls}].var={','.join(repr(float(v)) for v in self.var_[k])}")
        return "\n".join(lines)


def fit_gnb(features, classes, floor: float = 1e-9) -> GaussianNB:
    return GaussianNB(var_floor=floor).fit(features, classes)


def predict_proba(model: Classifier, x) -> np.ndarray:
    """Probability vector over `model.classes_` for a single feature vector."""
    return model.predict_proba(np.asarray(x, dtype=np.float64)[None, :])[0]


def class_proba(model: Classifier, X, n_classes: int) -> np.ndarray:
    """(n, n_classes) probabilities indexed by class id; untrained classes get 0."""
    P = np.zeros((len(X), n_classes))
    P[:, np.asarray(model.classes_, dtype=np.int64)] = model.predict_proba(X)
    return P


def nonconformity(model: Classifier, x, k: int) -> float:
    """``1 - p(k | x)``; a class the model never saw scores exactly 1."""
    hits = np.flatnonzero(np.asarray(model.classes_) == k)
    if hits.size == 0:
        return 1.0
    return float(1.0 - predict_proba(model, x)[hits[0]])
