"""Smoothed split-conformal p-values over the nodes of a labelset tree."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .labeltree import LabelTree
from .model import class_proba

MODES = ("mirrored", "literal")
SCHEMES = ("true-label", "every-node")


class CalibrationError(ValueError):
    pass


def smoothed_pvalue(cal, s: float, u: float, mode: str = "mirrored") -> float:
    """Rank of score `s` among calibration scores, ties split by `u`.

    ``mirrored`` counts calibration scores above `s` (small p for a
    nonconforming candidate); ``literal`` counts those below it. Both divide
    by ``len(cal) + 1``.
    """
    cal = np.asarray(cal, dtype=np.float64)
    if cal.size == 0:
        raise CalibrationError("empty calibration scores")
    ties = np.count_nonzero(cal == s)
    if mode == "mirrored":
        head = np.count_nonzero(cal > s)
    elif mode == "literal":
        head = np.count_nonzero(cal < s)
    else:
        raise ValueError(f"unknown p-value mode {mode!r}")
    return float((head + u * ties) / (cal.size + 1))


def smoothed_pvalues(sorted_cal: np.ndarray, S, U, mode: str = "mirrored") -> np.ndarray:
    """Vectorised `smoothed_pvalue` against one *sorted* calibration array."""
    n = sorted_cal.size
    if n == 0:
        raise CalibrationError("empty calibration scores")
    S = np.asarray(S, dtype=np.float64)
    lo = np.searchsorted(sorted_cal, S, side="left")
    hi = np.searchsorted(sorted_cal, S, side="right")
    if mode == "mirrored":
        head = n - hi
    elif mode == "literal":
        head = lo
    else:
        raise ValueError(f"unknown p-value mode {mode!r}")
    return (head + np.asarray(U) * (hi - lo)) / (n + 1)


class RandomStream:
    """Counter-based uniforms addressed by (instance id, position).

    Each instance owns a Philox4x64 counter block whose most significant
    counter word is the instance id; the key is derived from
    ``SeedSequence([seed, stream])``. The uniform at position ``j`` is the
    ``j``-th double drawn from that block, so an address always maps to the
    same value regardless of which other addresses were queried.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._key = np.random.SeedSequence([self.seed, self.stream]).generate_state(2, np.uint64)

    def _gen(self, instance: int):
        bitgen = np.random.Philox(counter=[0, 0, 0, int(instance)], key=self._key)
        return np.random.Generator(bitgen)

    def uniforms(self, instances, n: int) -> np.ndarray:
        instances = np.atleast_1d(np.asarray(instances, dtype=np.int64))
        out = np.empty((len(instances), n))
        for r, inst in enumerate(instances):
            out[r] = self._gen(inst).random(n)
        out[out == 0.0] = np.nextafter(0.0, 1.0)
        return out

    def uniform(self, instance: int, position: int) -> float:
        return float(self.uniforms([instance], position + 1)[0, position])


@dataclass
class CalibrationTable:
    """Sorted calibration scores for every (layer, node) of a tree.

    Under the ``true-label`` scheme each calibration point contributes its
    own-class score, so all nodes of a layer share one array. Under
    ``every-node`` each node ``k`` gets ``1 - p(k | x)`` for every point.
    Layers whose model is degenerate hold empty arrays.
    """

    scheme: str
    n_cal: int
    lists: dict = field(default_factory=dict)
    layer_scores: list = field(default_factory=list)

    @property
    def shared(self) -> bool:
        return self.scheme == "true-label"

    def scores(self, layer: int, k: int) -> np.ndarray:
        return self.lists[(layer, k)]


def _layer_classes(tree: LabelTree, ds_codes, layer: int) -> np.ndarray:
    lookup = tree._layer_lookup[layer - 1]
    return np.array([lookup[c] for c in ds_codes.tolist()], dtype=np.int64)


def calibrate(tree: LabelTree, models, X_cal, codes_cal, scheme: str = "true-label") -> CalibrationTable:
    """Nonconformity scores of the calibration rows at every layer node."""
    if len(models) != tree.L:
        raise ValueError(f"{len(models)} models for a tree with {tree.L} layers")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown calibration scheme {scheme!r}")
    X_cal = np.asarray(X_cal, dtype=np.float64)
    codes_cal = np.asarray(codes_cal, dtype=np.int64)
    table = CalibrationTable(scheme=scheme, n_cal=len(X_cal))
    for i, layer in enumerate(tree.layers, start=1):
        model = models[i - 1]
        if model is None:
            empty = np.empty(0)
            table.layer_scores.append(empty)
            for k in range(len(layer)):
                table.lists[(i, k)] = empty
            continue
        P = class_proba(model, X_cal, len(layer))
        if scheme == "true-label":
            y = _layer_classes(tree, codes_cal, i)
            shared = np.sort(1.0 - P[np.arange(len(y)), y])
            table.layer_scores.append(shared)
            for k in range(len(layer)):
                table.lists[(i, k)] = shared
        else:
            per_node = np.sort(1.0 - P, axis=0).T
            table.layer_scores.append(per_node)
            for k in range(len(layer)):
                table.lists[(i, k)] = per_node[k]
    return table


def pvalue_matrix(X, instance_ids, tree: LabelTree, models, table: CalibrationTable,
                  stream: RandomStream, mode: str = "mirrored") -> np.ndarray:
    """(m, n_nodes) p-values indexed by node id.

    Each node is tested with the model of its own depth; a leaf that ends
    above the last layer reuses that p-value as its pass-through copy. The
    root column is 1.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    P = np.ones((len(X), tree.n_nodes))
    U = stream.uniforms(instance_ids, tree.n_nodes)
    for i, layer in enumerate(tree.layers, start=1):
        own = [(k, nid) for k, nid in enumerate(layer) if tree.depth[nid] == i]
        if not own or models[i - 1] is None:
            continue
        ks = np.array([k for k, _ in own])
        nids = np.array([nid for _, nid in own])
        S = 1.0 - class_proba(models[i - 1], X, len(layer))[:, ks]
        if table.shared:
            P[:, nids] = smoothed_pvalues(table.layer_scores[i - 1], S, U[:, nids], mode)
        else:
            for col, (k, nid) in enumerate(own):
                P[:, nid] = smoothed_pvalues(table.lists[(i, k)], S[:, col], U[:, nid], mode)
    return P


def pvalues_for(x, tree, models, table, stream, instance_id: int, mode: str = "mirrored"):
    return pvalue_matrix(np.asarray(x)[None, :], [instance_id], tree, models, table, stream, mode)[0]


def by_layer(tree: LabelTree, prow) -> list[np.ndarray]:
    """Reshape one row of node p-values into per-layer vectors ``p(i, k)``."""
    return [np.asarray(prow)[layer] for layer in tree.layers]


def write_calibration_csv(table: CalibrationTable, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "node", "n", "min", "q25", "median", "q75", "max"])
        for (i, k), s in sorted(table.lists.items()):
            if s.size == 0:
                w.writerow([i, k, 0, "", "", "", "", ""])
                continue
            q = np.quantile(s, [0, 0.25, 0.5, 0.75, 1.0])
            w.writerow([i, k, s.size] + [f"{v:.6g}" for v in q])
