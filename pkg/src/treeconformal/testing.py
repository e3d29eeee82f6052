"""Layer-by-layer FWER-controlling tests over a labelset tree."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .labeltree import LabelTree

log = logging.getLogger(__name__)

ACCEPTED, REJECTED, REJECTED_BY_ANCESTOR = 0, 1, 2
_STATUS = {ACCEPTED: "accepted", REJECTED: "rejected", REJECTED_BY_ANCESTOR: "rejected-by-ancestor"}


class TuningError(ValueError):
    pass


@dataclass(frozen=True)
class AlphaAllocation:
    alpha: float
    levels: tuple[float, ...]
    kind: str = "bonferroni"
    lam: float | None = None

    @property
    def L(self) -> int:
        return len(self.levels)


def bonferroni_allocation(alpha: float, L: int, weights=None) -> AlphaAllocation:
    """Split `alpha` over `L` layers, uniformly unless `weights` are given."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if L < 1:
        raise ValueError("need at least one layer")
    w = np.ones(L) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (L,) or np.any(w <= 0):
        raise ValueError("weights must be L positive numbers")
    return AlphaAllocation(alpha, tuple(float(alpha * v / w.sum()) for v in w))


def adaptive_allocation(lam: float, alpha: float, L: int) -> AlphaAllocation:
    if not 0 < lam <= 1:
        raise ValueError(f"lambda must be in (0, 1], got {lam}")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    return AlphaAllocation(alpha, (lam * alpha,) * L, kind="adaptive", lam=lam)


def node_thresholds(tree: LabelTree, levels) -> np.ndarray:
    """Critical value per node id.

    A leaf ending at depth ``d < L`` is retested in layers ``d..L`` with the
    same p-value, so it is rejected iff ``p < max(levels[d-1:])``.
    """
    levels = np.asarray(levels, dtype=np.float64)
    if levels.shape != (tree.L,):
        raise ValueError(f"need {tree.L} layer levels, got {levels.shape}")
    tail_max = np.maximum.accumulate(levels[::-1])[::-1]
    thr = np.zeros(tree.n_nodes)
    for nd in tree.nodes:
        if nd.depth == 0:
            continue
        thr[nd.id] = tail_max[nd.depth - 1] if nd.is_leaf else levels[nd.depth - 1]
    return thr


def reject_matrix(tree: LabelTree, P, levels) -> tuple[np.ndarray, np.ndarray]:
    """Own and inherited rejections for a batch of p-value rows.

    Returns ``(own, inherited)`` boolean arrays of shape (m, n_nodes).
    """
    P = np.atleast_2d(P)
    if P.shape[1] != tree.n_nodes:
        raise ValueError(f"p-value rows cover {P.shape[1]} nodes, tree has {tree.n_nodes}")
    thr = node_thresholds(tree, levels)
    own = P < thr
    own[:, tree.root] = False
    inherited = np.zeros_like(own)
    # parents precede children in `order`, so one pass per depth level
    order = tree.order
    depths = tree.depth[order]
    for d in range(1, int(depths.max()) + 1):
        ids = order[depths == d]
        par = tree.parent[ids]
        inherited[:, ids] = own[:, par] | inherited[:, par]
    return own, inherited


def accept_leaves(tree: LabelTree, P, levels) -> np.ndarray:
    """(m, n_leaves) mask of leaves whose whole root path survives."""
    own, inherited = reject_matrix(tree, P, levels)
    return ~(own | inherited)[:, tree.leaves]


@dataclass
class TestOutcome:
    status: np.ndarray
    accepted: tuple[int, ...]

    def describe(self, node_id: int) -> str:
        return _STATUS[int(self.status[node_id])]


def hierarchical_test(tree: LabelTree, pv, alloc: AlphaAllocation, verbose: bool = False) -> TestOutcome:
    """Test every node layer by layer; a rejection removes the whole subtree."""
    pv = np.asarray(pv, dtype=np.float64)
    if pv.shape != (tree.n_nodes,):
        raise ValueError(f"need one p-value per node ({tree.n_nodes}), got {pv.shape}")
    if alloc.L != tree.L:
        raise ValueError(f"allocation has {alloc.L} levels, tree has {tree.L} layers")
    if np.any(np.isnan(pv)):
        raise ValueError("missing p-value")
    own, inherited = reject_matrix(tree, pv[None, :], alloc.levels)
    status = np.where(inherited[0], REJECTED_BY_ANCESTOR, np.where(own[0], REJECTED, ACCEPTED))
    acc = tuple(int(tree.nodes[l].members[0]) for l in tree.leaves if status[l] == ACCEPTED)
    if verbose:
        for line in trace_lines(tree, pv, alloc, status):
            log.info(line)
    return TestOutcome(status=status, accepted=acc)


def trace_lines(tree: LabelTree, pv, alloc: AlphaAllocation, status=None) -> list[str]:
    if status is None:
        status = hierarchical_test(tree, pv, alloc).status
    out = []
    for i, layer in enumerate(tree.layers, start=1):
        for k, nid in enumerate(layer):
            members = ",".join(str(v) for v in tree.nodes[nid].members)
            out.append(f"layer={i} node={k} id={nid} members={{{members}}} "
                       f"p={pv[nid]:.6f} alpha_i={alloc.levels[i - 1]:.6f} "
                       f"decision={_STATUS[int(status[nid])]}")
    return out


# --- adaptive critical value ----------------------------------------------

def target_coverage(n: int, alpha: float) -> float:
    return 1.0 - (1.0 + 1.0 / n) * (alpha - 1.0 / n)


def _path_coverage(path_p: np.ndarray, a: float) -> float:
    # hierarchical rule along the true path: once a layer rejects, the
    # rest of the path is rejected with it
    alive = np.ones(path_p.shape[0], dtype=bool)
    for i in range(path_p.shape[1]):
        alive &= ~(path_p[:, i] < a)
    return float(alive.mean())


@dataclass(frozen=True)
class TuningResult:
    alpha_star: float
    lam: float
    coverage: float
    target: float
    iterations: int


def tune_alpha_star(path_p, alpha: float, tol: float = 1e-6, max_iter: int = 60) -> TuningResult:
    """Bisection for the largest flat level whose tuning coverage meets the target.

    Parameters
    ----------
    path_p : (n3, L) array
        p-values of the true node in every layer for each tuning point.
    alpha : float
        Nominal level.
    """
    path_p = np.atleast_2d(np.asarray(path_p, dtype=np.float64))
    n = path_p.shape[0]
    if n == 0:
        raise TuningError("empty tuning set")
    if alpha <= 1.0 / n:
        raise TuningError(f"alpha={alpha} <= 1/n3={1.0 / n:.4g}; use a larger tuning set")
    target = target_coverage(n, alpha)
    cov_hi = _path_coverage(path_p, alpha)
    if cov_hi >= target:
        return TuningResult(alpha, 1.0, cov_hi, target, 0)
    lo, hi = 0.0, alpha
    best, best_cov = None, None
    it = 0
    while it < max_iter and hi - lo >= tol * alpha:
        it += 1
        mid = 0.5 * (lo + hi)
        cov = _path_coverage(path_p, mid)
        if cov >= target:
            lo, best, best_cov = mid, mid, cov
        else:
            hi = mid
    if best is None:
        # nothing met the target; the smallest level tried is the safest choice
        best, best_cov = hi, _path_coverage(path_p, hi)
        log.warning("tuning coverage below target at every trial level")
    return TuningResult(best, best / alpha, best_cov, target, it)


def lambda_star_oracle(min_pvalues, alpha: float) -> float:
    """Order-statistic form of the tuned level.

    The ``ceil(n * (1 + 1/n)(alpha - 1/n))``-th smallest per-point minimum
    true-node p-value, capped at `alpha`.
    """
    z = np.sort(np.asarray(min_pvalues, dtype=np.float64))
    n = z.size
    if n == 0:
        raise ValueError("empty p-value list")
    level = (1.0 + 1.0 / n) * (alpha - 1.0 / n)
    if level <= 0:
        raise TuningError(f"alpha={alpha} too small for n={n}")
    k = min(n, max(1, math.ceil(level * n - 1e-9)))
    return float(min(z[k - 1], alpha))
