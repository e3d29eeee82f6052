"""Prediction-set methods: tree-based (TB1, TB2) and the BR / powerset baselines."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .conformal import RandomStream, calibrate, pvalue_matrix, smoothed_pvalues
from .data import DataSplit, MultiLabelDataset, decode_codes, split
from .labeltree import LabelTree, build_tree, flat_tree
from .model import GaussianNB, class_proba
from .testing import (TuningResult, accept_leaves, adaptive_allocation,
                      bonferroni_allocation, hierarchical_test, tune_alpha_star)

log = logging.getLogger(__name__)

METHODS = ("TB1", "TB2", "BR", "PS1", "PS2")
PROCEDURES = ("fixed", "adaptive")
MAX_TB2_LABELS = 16
_CHUNK = 256


class CapacityError(ValueError):
    pass


@dataclass
class MethodConfig:
    method: str = "TB1"
    procedure: str = "fixed"
    alpha: float | None = None
    seed: int = 0
    ratios: tuple = (0.2, 0.6, 0.2)
    pvalue_mode: str = "mirrored"
    calibration: str = "true-label"
    var_floor: float = 1e-9
    layer_weights: tuple | None = None
    classifier: Callable | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.procedure not in PROCEDURES:
            raise ValueError(f"unknown procedure {self.procedure!r}")
        if self.method not in ("TB1", "TB2"):
            self.procedure = "fixed"

    def make_classifier(self):
        if self.classifier is not None:
            return self.classifier()
        return GaussianNB(var_floor=self.var_floor)

    @property
    def label(self) -> str:
        if self.method in ("TB1", "TB2"):
            return f"{self.method}-{self.procedure}"
        return self.method


@dataclass(frozen=True)
class PredictionSet:
    members: frozenset
    alpha: float
    method: str

    def __contains__(self, code):
        return int(code) in self.members

    def __len__(self):
        return len(self.members)

    def codes(self) -> list[int]:
        return sorted(self.members)


def _fit_part(split_: DataSplit):
    parts = [split_.train, split_.calibration]
    if split_.tuning is not None:
        parts.append(split_.tuning)
    return np.concatenate(parts)


class TreePipeline:
    """Fitted tree, per-layer classifiers and calibration table.

    Also serves PS1/PS2, which run on a one-layer tree whose leaves are the
    observed labelsets.
    """

    def __init__(self, cfg: MethodConfig, tree: LabelTree, models, table, observed,
                 c: int, degenerate_layers=()):
        self.cfg = cfg
        self.tree = tree
        self.models = models
        self.calibration = table
        self.observed = frozenset(observed)
        self.c = c
        self.degenerate_layers = tuple(degenerate_layers)
        self.stream = RandomStream(cfg.seed)
        self.lambdas: dict[float, TuningResult] = {}
        self._tune_paths = None
        self.unobserved_only = np.array(
            [not any(m in self.observed for m in nd.members) for nd in tree.nodes])
        self.unobserved_only[tree.root] = False
        self._leaf_paths = tree.leaf_paths()
        universe = np.arange(1 << c, dtype=np.int64)
        self.unobserved_codes = universe[~np.isin(universe, list(self.observed))]

    @property
    def L(self) -> int:
        return self.tree.L

    # -- p-values ----------------------------------------------------------
    def pvalues(self, X, ids, missing: str = "parent") -> np.ndarray:
        """Node p-values; under TB2 unobserved-only nodes inherit their parent's."""
        P = pvalue_matrix(X, ids, self.tree, self.models, self.calibration, self.stream,
                          self.cfg.pvalue_mode)
        if self.cfg.method == "TB2" and missing != "model":
            for nid in self.tree.order:
                if self.unobserved_only[nid]:
                    P[:, nid] = P[:, self.tree.parent[nid]] if missing == "parent" else 0.0
        return P

    # -- critical values ---------------------------------------------------
    def set_tuning(self, X, codes, ids):
        P = self.pvalues(X, ids)
        pos = self.tree.leaf_position(codes)
        if np.any(pos < 0):
            raise ValueError("tuning labelsets must be leaves of the tree")
        paths = self._leaf_paths[pos]
        self._tune_paths = np.take_along_axis(P, paths, axis=1)
        self.lambdas.clear()

    @property
    def n_tune(self) -> int:
        return 0 if self._tune_paths is None else self._tune_paths.shape[0]

    def tune(self, alpha: float) -> TuningResult:
        if alpha not in self.lambdas:
            if self._tune_paths is None:
                raise ValueError("adaptive procedure needs a tuning set")
            self.lambdas[alpha] = tune_alpha_star(self._tune_paths, alpha)
        return self.lambdas[alpha]

    def tune_min_pvalues(self) -> np.ndarray:
        return self._tune_paths.min(axis=1)

    def allocation(self, alpha: float):
        if self.cfg.procedure == "adaptive":
            return adaptive_allocation(self.tune(alpha).lam, alpha, self.L)
        return bonferroni_allocation(alpha, self.L, self.cfg.layer_weights)

    def lambda_star(self, alpha: float):
        return self.tune(alpha).lam if self.cfg.procedure == "adaptive" else None

    # -- prediction --------------------------------------------------------
    def _extra(self, add_missing):
        if add_missing is None:
            add_missing = self.cfg.method == "PS2"
        return self.unobserved_codes if add_missing else np.empty(0, dtype=np.int64)

    def _label(self, add_missing):
        if add_missing is None or self.cfg.method not in ("PS1", "PS2"):
            return self.cfg.label
        return "PS2" if add_missing else "PS1"

    def predict(self, x, alpha: float, instance_id: int = 0, add_missing=None) -> PredictionSet:
        """Accepted leaves for one instance; PS2 also returns every unobserved code."""
        prow = self.pvalues(np.asarray(x)[None, :], [instance_id])[0]
        out = hierarchical_test(self.tree, prow, self.allocation(alpha))
        members = set(out.accepted) | set(self._extra(add_missing).tolist())
        label = self._label(add_missing)
        return PredictionSet(frozenset(members), alpha, label)

    def leaf_masks(self, P, alpha):
        return accept_leaves(self.tree, P, self.allocation(alpha).levels)

    def evaluate(self, X, codes, ids, alphas, add_missing=None):
        """Coverage flags and set sizes for every alpha, without materialising sets."""
        codes = np.asarray(codes, dtype=np.int64)
        extra = self._extra(add_missing)
        pos = self.tree.leaf_position(codes)
        rows = np.arange(len(codes))
        missing = np.isin(codes, extra)
        out = {a: (np.zeros(len(codes), bool), np.zeros(len(codes), np.int64)) for a in alphas}
        for s in range(0, len(codes), _CHUNK):
            sl = slice(s, s + _CHUNK)
            P = self.pvalues(X[sl], ids[sl])
            for a in alphas:
                acc = self.leaf_masks(P, a)
                r = rows[sl] - s
                hit = np.where(pos[sl] >= 0, acc[r, np.maximum(pos[sl], 0)], False)
                out[a][0][sl] = hit | missing[sl]
                out[a][1][sl] = acc.sum(axis=1) + len(extra)
        return out

    def predict_sets(self, X, ids, alpha, add_missing=None) -> list[PredictionSet]:
        P = self.pvalues(X, ids)
        acc = self.leaf_masks(P, alpha)
        extra = set(self._extra(add_missing).tolist())
        label = self._label(add_missing)
        return [PredictionSet(frozenset(set(self.tree.leaf_codes[row].tolist()) | extra),
                              alpha, label) for row in acc]


class BinaryRelevancePipeline:
    """One binary conformal predictor per label, each at level alpha / c."""

    def __init__(self, cfg: MethodConfig, models, cal_scores, c: int):
        self.cfg = cfg
        self.models = models
        self.cal_scores = cal_scores
        self.c = c
        self.stream = RandomStream(cfg.seed, stream=1)
        self.lambdas = {}

    def lambda_star(self, alpha):
        return None

    def pvalues(self, X, ids) -> np.ndarray:
        """(m, c, 2) p-values for label value 0 and 1 of every label."""
        X = np.atleast_2d(X)
        U = self.stream.uniforms(ids, 2 * self.c).reshape(len(X), self.c, 2)
        P = np.ones((len(X), self.c, 2))
        for l, model in enumerate(self.models):
            if model is None:
                continue
            S = 1.0 - class_proba(model, X, 2)
            cal = self.cal_scores[l]
            for b in (0, 1):
                ref = cal if isinstance(cal, np.ndarray) else cal[b]
                P[:, l, b] = smoothed_pvalues(ref, S[:, b], U[:, l, b], self.cfg.pvalue_mode)
        return P

    def label_sets(self, P, alpha) -> np.ndarray:
        keep = P >= alpha / self.c
        empty = ~keep.any(axis=2)
        keep[empty] = True
        return keep

    def predict(self, x, alpha: float, instance_id: int = 0) -> PredictionSet:
        keep = self.label_sets(self.pvalues(np.asarray(x)[None, :], [instance_id]), alpha)[0]
        codes = [0]
        for l in range(self.c):
            codes = [2 * v + b for v in codes for b in (0, 1) if keep[l, b]]
        return PredictionSet(frozenset(codes), alpha, "BR")

    def evaluate(self, X, codes, ids, alphas):
        Y = decode_codes(codes, self.c).astype(np.int64)
        out = {}
        P = np.concatenate([self.pvalues(X[s:s + _CHUNK], ids[s:s + _CHUNK])
                            for s in range(0, len(X), _CHUNK)])
        rows = np.arange(len(X))[:, None]
        for a in alphas:
            keep = self.label_sets(P, a)
            hit = keep[rows, np.arange(self.c)[None, :], Y].all(axis=1)
            size = np.prod(keep.sum(axis=2), axis=1, dtype=np.int64)
            out[a] = (hit, size)
        return out

    def predict_sets(self, X, ids, alpha):
        return [self.predict(x, alpha, i) for x, i in zip(X, ids)]


def _fit_layers(cfg, tree, X_tr, codes_tr):
    models, degenerate = [], []
    for i in range(1, tree.L + 1):
        lookup = tree._layer_lookup[i - 1]
        y = np.array([lookup[c] for c in codes_tr.tolist()], dtype=np.int64)
        if len(np.unique(y)) < 2:
            models.append(None)
            degenerate.append(i)
            log.info("layer %d has a single training class; its nodes get p = 1", i)
            continue
        models.append(cfg.make_classifier().fit(X_tr, y))
    return models, degenerate


def _fit_tree_pipeline(ds, cfg, sp):
    fit_idx = _fit_part(sp)
    codes = ds.codes
    observed = sorted(set(codes[fit_idx].tolist()))
    if cfg.method == "TB2":
        if ds.c > MAX_TB2_LABELS:
            raise CapacityError(f"TB2 needs the full 2^c tree; c={ds.c} exceeds {MAX_TB2_LABELS}")
        tree = build_tree(range(1 << ds.c), ds.c)
    elif cfg.method == "TB1" and len(observed) >= 2:
        tree = build_tree(observed, ds.c)
    else:
        tree = flat_tree(observed, ds.c)
    models, degenerate = _fit_layers(cfg, tree, ds.features[sp.train], codes[sp.train])
    table = calibrate(tree, models, ds.features[sp.calibration], codes[sp.calibration],
                      cfg.calibration)
    pipe = TreePipeline(cfg, tree, models, table, observed, ds.c, degenerate)
    if cfg.procedure == "adaptive":
        if sp.tuning is None:
            raise ValueError("adaptive procedure needs a tuning split")
        pipe.set_tuning(ds.features[sp.tuning], codes[sp.tuning], sp.tuning)
        if cfg.alpha is not None:
            pipe.tune(cfg.alpha)
    return pipe


def _fit_br(ds, cfg, sp):
    X_tr, Y_tr = ds.features[sp.train], ds.labels[sp.train]
    X_cal, Y_cal = ds.features[sp.calibration], ds.labels[sp.calibration].astype(np.int64)
    models, cal = [], []
    for l in range(ds.c):
        if len(np.unique(Y_tr[:, l])) < 2:
            models.append(None)
            cal.append(None)
            continue
        m = cfg.make_classifier().fit(X_tr, Y_tr[:, l])
        P = class_proba(m, X_cal, 2)
        models.append(m)
        if cfg.calibration == "true-label":
            cal.append(np.sort(1.0 - P[np.arange(len(X_cal)), Y_cal[:, l]]))
        else:
            cal.append((np.sort(1.0 - P[:, 0]), np.sort(1.0 - P[:, 1])))
    return BinaryRelevancePipeline(cfg, models, cal, ds.c)


def fit_pipeline(ds: MultiLabelDataset, cfg: MethodConfig, sp: DataSplit | None = None):
    """Fit one method end to end on the train/calibration(/tuning) parts of `sp`."""
    if sp is None:
        sp = split(ds, cfg.ratios, cfg.seed)
    if cfg.method == "BR":
        return _fit_br(ds, cfg, sp)
    return _fit_tree_pipeline(ds, cfg, sp)


def tb_predict(pipe: TreePipeline, x, alpha: float, instance_id: int = 0) -> PredictionSet:
    return pipe.predict(x, alpha, instance_id)


def br_predict(pipe: BinaryRelevancePipeline, x, alpha: float, instance_id: int = 0) -> PredictionSet:
    return pipe.predict(x, alpha, instance_id)


def ps1_predict(pipe: TreePipeline, x, alpha: float, instance_id: int = 0) -> PredictionSet:
    return pipe.predict(x, alpha, instance_id, add_missing=False)


def ps2_predict(pipe: TreePipeline, x, alpha: float, instance_id: int = 0) -> PredictionSet:
    """PS1 set plus every labelset absent from the fitting data."""
    return pipe.predict(x, alpha, instance_id, add_missing=True)
