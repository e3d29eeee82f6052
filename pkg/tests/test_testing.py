import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from treeconformal.labeltree import build_tree, flat_tree
from treeconformal.testing import (ACCEPTED, REJECTED, REJECTED_BY_ANCESTOR, TuningError,
                                   accept_leaves, adaptive_allocation, bonferroni_allocation,
                                   hierarchical_test, lambda_star_oracle, node_thresholds,
                                   reject_matrix, target_coverage, trace_lines, tune_alpha_star)


def oracle_accepted(tree, pv, levels):
    """Enumerate root-to-leaf paths layer by layer; accept iff no node on it is rejected."""
    out = []
    for nd in tree.nodes:
        if nd.children:
            continue
        chain, cur = [], nd.id
        while tree.nodes[cur].parent is not None:
            chain.append(cur)
            cur = tree.nodes[cur].parent
        chain.reverse()
        chain += [nd.id] * (tree.L - len(chain))
        if all(pv[node] >= levels[i] for i, node in enumerate(chain)):
            out.append(nd.members[0])
    return tuple(sorted(out))


def random_tree(rng):
    c = int(rng.integers(1, 5))
    m = int(rng.integers(2, min(16, 1 << c) + 1))
    return build_tree(rng.choice(1 << c, size=m, replace=False), c)


class TestAllocation:
    def test_bonferroni(self):
        a = bonferroni_allocation(0.12, 3)
        assert a.levels == pytest.approx((0.04, 0.04, 0.04))
        assert sum(a.levels) == pytest.approx(0.12)
        assert bonferroni_allocation(0.3, 1).levels == (0.3,)

    def test_bonferroni_weights(self):
        a = bonferroni_allocation(0.1, 2, weights=[3, 1])
        assert a.levels == pytest.approx((0.075, 0.025))
        with pytest.raises(ValueError):
            bonferroni_allocation(0.1, 2, weights=[1, 0])

    def test_adaptive(self):
        assert adaptive_allocation(0.08, 0.1, 4).levels == pytest.approx((0.008,) * 4)
        assert adaptive_allocation(1 / 3, 0.09, 3).levels == pytest.approx(
            bonferroni_allocation(0.09, 3).levels)

    @pytest.mark.parametrize("lam, alpha", [(0.0, 0.1), (1.5, 0.1), (0.5, 1.0), (0.5, 0.0)])
    def test_adaptive_errors(self, lam, alpha):
        with pytest.raises(ValueError):
            adaptive_allocation(lam, alpha, 3)

    @pytest.mark.parametrize("alpha, L", [(0.0, 2), (1.0, 2), (0.1, 0)])
    def test_bonferroni_errors(self, alpha, L):
        with pytest.raises(ValueError):
            bonferroni_allocation(alpha, L)


class TestHierarchical:
    def test_all_ones_accepts_everything(self):
        tree = build_tree(range(8), 3)
        out = hierarchical_test(tree, np.ones(tree.n_nodes), bonferroni_allocation(0.1, 3))
        assert out.accepted == tuple(range(8))
        assert np.all(out.status == ACCEPTED)

    def test_root_layer_rejection_propagates(self):
        tree = build_tree(range(8), 3)
        pv = np.ones(tree.n_nodes)
        left = tree.layers[0][0]
        pv[left] = 0.0
        out = hierarchical_test(tree, pv, bonferroni_allocation(0.1, 3))
        assert out.accepted == (4, 5, 6, 7)
        assert out.describe(left) == "rejected"
        for nd in tree.nodes:
            if nd.id != left and set(nd.members) <= {0, 1, 2, 3}:
                assert out.status[nd.id] == REJECTED_BY_ANCESTOR

    def test_strict_inequality(self):
        tree = flat_tree([0, 1], 1)
        pv = np.array([0.05, 0.0499, 1.0])
        out = hierarchical_test(tree, pv, bonferroni_allocation(0.05, 1))
        assert out.accepted == (0,)
        assert out.status[1] == REJECTED

    def test_pass_through_leaf_uses_loosest_later_level(self):
        tree = build_tree([0, 1, 3, 31], 5)
        leaf31 = [nd.id for nd in tree.nodes if nd.members == (31,)][0]
        thr = node_thresholds(tree, [0.01, 0.02, 0.05])
        assert thr[leaf31] == 0.05

    def test_contract_errors(self):
        tree = build_tree(range(4), 2)
        alloc = bonferroni_allocation(0.1, 2)
        with pytest.raises(ValueError):
            hierarchical_test(tree, np.ones(3), alloc)
        pv = np.ones(tree.n_nodes)
        pv[0] = np.nan
        with pytest.raises(ValueError):
            hierarchical_test(tree, pv, alloc)
        with pytest.raises(ValueError):
            hierarchical_test(tree, np.ones(tree.n_nodes), bonferroni_allocation(0.1, 3))

    def test_c2_hand_set(self):
        tree = build_tree(range(4), 2)
        pv = np.ones(tree.n_nodes)
        layer1, layer2 = tree.layers
        pv[layer1[1]] = 0.02      # node {2,3} rejected at 0.05
        pv[layer2[0]] = 0.04      # leaf {0} rejected
        levels = (0.05, 0.05)
        out = hierarchical_test(tree, pv, adaptive_allocation(0.5, 0.1, 2))
        assert out.accepted == oracle_accepted(tree, pv, levels) == (1,)

    def test_matches_oracle_random(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            tree = random_tree(rng)
            pv = rng.random(tree.n_nodes) * rng.choice([0.1, 1.0])
            levels = tuple(rng.uniform(0.001, 0.1, size=tree.L))
            out = hierarchical_test(tree, pv, bonferroni_allocation(0.5, tree.L, levels))
            scaled = bonferroni_allocation(0.5, tree.L, levels).levels
            assert out.accepted == oracle_accepted(tree, pv, scaled)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_closure_and_batch(self, seed):
        rng = np.random.default_rng(seed)
        tree = random_tree(rng)
        P = rng.random((6, tree.n_nodes)) * 0.3
        alloc = bonferroni_allocation(0.4, tree.L)
        acc = accept_leaves(tree, P, alloc.levels)
        own, inherited = reject_matrix(tree, P, alloc.levels)
        for r in range(6):
            out = hierarchical_test(tree, P[r], alloc)
            assert tuple(tree.leaf_codes[acc[r]].tolist()) == out.accepted
            # accepted leaves have every ancestor accepted
            for leaf in tree.leaves[acc[r]]:
                assert all(out.status[n] == ACCEPTED for n in tree.path(int(leaf)))
            # a rejection marks the whole subtree
            for nd in tree.nodes:
                if out.status[nd.id] != ACCEPTED:
                    assert all(out.status[ch] != ACCEPTED for ch in nd.children)
            assert not (own[r] & inherited[r])[tree.root]

    def test_rejection_monotone(self):
        rng = np.random.default_rng(77)
        for _ in range(200):
            tree = random_tree(rng)
            pv = rng.random(tree.n_nodes) * 0.2
            lo = rng.uniform(0.001, 0.05, size=tree.L)
            hi = lo + rng.uniform(0, 0.05, size=tree.L)
            acc_lo = accept_leaves(tree, pv[None], lo)[0]
            acc_hi = accept_leaves(tree, pv[None], hi)[0]
            assert np.all(acc_hi <= acc_lo)

    def test_verbose_trace(self, caplog):
        tree = build_tree(range(4), 2)
        pv = np.linspace(0.01, 1, tree.n_nodes)
        alloc = bonferroni_allocation(0.1, 2)
        with caplog.at_level(logging.INFO, logger="treeconformal.testing"):
            hierarchical_test(tree, pv, alloc, verbose=True)
        lines = trace_lines(tree, pv, alloc)
        assert len(lines) == 2 + 4
        assert caplog.messages == lines
        assert lines[0].startswith("layer=1 node=0 ")
        assert "decision=" in lines[-1]


class TestTuning:
    def test_target_example(self):
        assert target_coverage(100, 0.1) == pytest.approx(1 - 1.01 * 0.09)
        assert target_coverage(100, 0.1) == pytest.approx(0.9091)

    def test_oracle_examples(self):
        z = np.arange(1, 11) / 10
        assert lambda_star_oracle(z, 0.2) == pytest.approx(0.2)
        assert lambda_star_oracle(np.ones(50), 0.1) == 0.1
        with pytest.raises(ValueError):
            lambda_star_oracle([], 0.1)
        with pytest.raises(TuningError):
            lambda_star_oracle([0.5] * 10, 0.05)

    def test_degenerate_alpha(self):
        with pytest.raises(TuningError):
            tune_alpha_star(np.ones((10, 2)), 0.1)
        with pytest.raises(TuningError):
            tune_alpha_star(np.ones((0, 2)), 0.1)

    def test_already_met_returns_alpha(self):
        res = tune_alpha_star(np.ones((50, 3)), 0.1)
        assert res.alpha_star == 0.1 and res.lam == 1.0 and res.iterations == 0

    def test_single_layer_uniform(self, rng):
        n, alpha = 4000, 0.1
        res = tune_alpha_star(rng.random((n, 1)), alpha)
        assert res.alpha_star == pytest.approx(alpha - 1 / n, abs=0.015)
        assert res.lam == pytest.approx(1 - 1 / (n * alpha), abs=0.15)
        assert res.coverage >= res.target

    @given(st.integers(20, 400), st.integers(1, 5), st.floats(0.06, 0.5), st.integers(0, 2 ** 31))
    def test_search_characterisation(self, n, L, alpha, seed):
        rng = np.random.default_rng(seed)
        P = rng.random((n, L)) ** rng.uniform(0.5, 3)
        res = tune_alpha_star(P, alpha)
        z = np.sort(P.min(axis=1))
        level = (1 + 1 / n) * (alpha - 1 / n)
        k = int(np.floor(level * n + 1e-9))
        sup = min(z[k] if k < n else 1.0, alpha)
        assert res.coverage >= res.target
        assert sup - 1e-6 * alpha - 1e-12 <= res.alpha_star <= sup
        oracle = lambda_star_oracle(z, alpha)
        gap = z[k] - z[max(k - 1, 0)] if k < n else 0.0
        assert abs(res.alpha_star - oracle) <= gap + 1e-6 * alpha + 1e-12
