import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from treeconformal.conformal import (CalibrationError, RandomStream, by_layer, calibrate,
                                     pvalue_matrix, pvalues_for, smoothed_pvalue,
                                     smoothed_pvalues, write_calibration_csv)
from treeconformal.data import split
from treeconformal.labeltree import build_tree
from treeconformal.model import fit_gnb
from treeconformal.predictors import MethodConfig, _fit_layers

grid_scores = st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 1.0]), min_size=1, max_size=25)


class TestSmoothed:
    def test_mirrored_no_ties(self):
        assert smoothed_pvalue([0.2, 0.4, 0.6], 0.5, 0.7) == pytest.approx(0.25)

    def test_mirrored_ties(self):
        assert smoothed_pvalue([0.5, 0.5, 0.2], 0.5, 0.5) == pytest.approx(0.25)

    def test_literal_ties(self):
        assert smoothed_pvalue([0.5, 0.5, 0.2], 0.5, 0.5, mode="literal") == pytest.approx(0.5)

    def test_extreme(self):
        cal = np.linspace(0.01, 1, 40)
        assert smoothed_pvalue(cal, 0.0, 0.3) == pytest.approx(40 / 41)

    def test_errors(self):
        with pytest.raises(CalibrationError):
            smoothed_pvalue([], 0.5, 0.5)
        with pytest.raises(CalibrationError):
            smoothed_pvalues(np.empty(0), [0.5], [0.5])
        with pytest.raises(ValueError):
            smoothed_pvalue([0.1], 0.5, 0.5, mode="upside-down")

    @given(grid_scores, st.lists(st.sampled_from([0.0, 0.1, 0.3, 0.5, 1.0]), min_size=1,
                                 max_size=10), st.floats(0.001, 0.999),
           st.sampled_from(["mirrored", "literal"]))
    def test_vectorised_matches_scalar(self, cal, S, u, mode):
        got = smoothed_pvalues(np.sort(cal), S, np.full(len(S), u), mode)
        want = [smoothed_pvalue(cal, s, u, mode) for s in S]
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-15)
        assert np.all((got >= 0) & (got <= 1))

    @given(grid_scores, st.floats(0, 1), st.floats(0, 1), st.floats(0.001, 0.999))
    def test_mirrored_monotone(self, cal, s1, s2, u):
        lo, hi = sorted((s1, s2))
        assert smoothed_pvalue(cal, lo, u) >= smoothed_pvalue(cal, hi, u)

    @given(grid_scores, st.floats(0, 1), st.floats(0.001, 0.999), st.randoms())
    def test_permutation_invariant(self, cal, s, u, rnd):
        shuffled = list(cal)
        rnd.shuffle(shuffled)
        assert smoothed_pvalue(cal, s, u) == smoothed_pvalue(shuffled, s, u)


class TestRandomStream:
    def test_address_is_stable(self):
        rs = RandomStream(7)
        block = rs.uniforms([3, 1, 3], 10)
        assert np.array_equal(block[0], block[2])
        assert rs.uniform(1, 4) == block[1, 4]
        # querying a longer block leaves earlier positions unchanged
        assert np.array_equal(rs.uniforms([3], 20)[0, :10], block[0])

    def test_streams_and_seeds_differ(self):
        a = RandomStream(7).uniforms([0], 5)
        assert not np.array_equal(a, RandomStream(8).uniforms([0], 5))
        assert not np.array_equal(a, RandomStream(7, stream=1).uniforms([0], 5))

    def test_uniform_distribution(self):
        U = RandomStream(0).uniforms(np.arange(400), 25).ravel()
        assert np.all((U > 0) & (U < 1))
        assert stats.kstest(U, "uniform").pvalue > 0.001
        # neighbouring addresses are uncorrelated
        V = RandomStream(0).uniforms(np.arange(2000), 2)
        assert abs(np.corrcoef(V[:, 0], V[:, 1])[0, 1]) < 0.1


@pytest.fixture(scope="module")
def fitted(sim_small):
    sp = split(sim_small, (0.3, 0.3, 0.4), seed=3)
    codes = sim_small.codes
    tree = build_tree(np.unique(codes), sim_small.c)
    models, _ = _fit_layers(MethodConfig(), tree, sim_small.features[sp.train], codes[sp.train])
    return sim_small, sp, tree, models


class TestCalibrate:
    def test_every_node_single_point(self):
        X = np.array([[0.0], [1.0], [5.0], [6.0]])
        tree = build_tree([0, 1], 1)
        model = fit_gnb(X, [0, 0, 1, 1])
        table = calibrate(tree, [model], X[:1], np.array([0]), scheme="every-node")
        assert sorted(table.lists) == [(1, 0), (1, 1)]
        assert all(len(v) == 1 for v in table.lists.values())
        assert table.n_cal == 1

    def test_schemes(self, fitted):
        ds, sp, tree, models = fitted
        Xc, cc = ds.features[sp.calibration], ds.codes[sp.calibration]
        shared = calibrate(tree, models, Xc, cc)
        every = calibrate(tree, models, Xc, cc, scheme="every-node")
        for table in (shared, every):
            assert set(table.lists) == {(i, k) for i, layer in enumerate(tree.layers, 1)
                                        for k in range(len(layer))}
            for s in table.lists.values():
                assert len(s) == len(sp.calibration)
                assert np.all((s >= 0) & (s <= 1)) and np.all(np.diff(s) >= 0)
        assert shared.scores(1, 0) is shared.scores(1, 1)
        with pytest.raises(ValueError):
            calibrate(tree, models[:-1], Xc, cc)
        with pytest.raises(ValueError):
            calibrate(tree, models, Xc, cc, scheme="weird")

    def test_own_class_scores_lower_on_separable_data(self, rng):
        X = np.r_[rng.normal(0, 1, 100), rng.normal(8, 1, 100)][:, None]
        y = np.r_[np.zeros(100, int), np.ones(100, int)]
        tree = build_tree([0, 1], 1)
        model = fit_gnb(X[::2], y[::2])
        table = calibrate(tree, [model], X[1::2], y[1::2], scheme="every-node")
        P = model.predict_proba(X[1::2])
        own = 1 - P[np.arange(100), y[1::2]]
        other = 1 - P[np.arange(100), 1 - y[1::2]]
        assert own.mean() < 0.05 < 0.95 < other.mean()
        assert np.median(table.scores(1, 0)) < 1.0

    def test_csv_dump(self, fitted, tmp_path):
        ds, sp, tree, models = fitted
        table = calibrate(tree, models, ds.features[sp.calibration], ds.codes[sp.calibration])
        write_calibration_csv(table, tmp_path / "cal.csv")
        rows = list(csv.reader(open(tmp_path / "cal.csv")))
        assert rows[0][:3] == ["layer", "node", "n"]
        assert len(rows) == 1 + len(table.lists)


class TestPValueMatrix:
    def test_shape_range_determinism(self, fitted):
        ds, sp, tree, models = fitted
        table = calibrate(tree, models, ds.features[sp.calibration], ds.codes[sp.calibration])
        X, ids = ds.features[sp.test[:50]], sp.test[:50]
        P = pvalue_matrix(X, ids, tree, models, table, RandomStream(5))
        assert P.shape == (50, tree.n_nodes)
        assert np.all(P[:, tree.root] == 1.0)
        assert np.all((P >= 0) & (P <= 1))
        again = pvalue_matrix(X, ids, tree, models, table, RandomStream(5))
        assert np.array_equal(P, again)
        one = pvalues_for(X[7], tree, models, table, RandomStream(5), int(ids[7]))
        assert np.array_equal(one, P[7])
        assert [len(v) for v in by_layer(tree, P[0])] == [len(layer) for layer in tree.layers]

    def test_degenerate_layer_gives_one(self, fitted):
        ds, sp, tree, models = fitted
        table = calibrate(tree, [None] + models[1:], ds.features[sp.calibration],
                          ds.codes[sp.calibration])
        P = pvalue_matrix(ds.features[:5], np.arange(5), tree, [None] + models[1:], table,
                          RandomStream(0))
        depth1 = [nid for nid in tree.layers[0]]
        assert np.all(P[:, depth1] == 1.0)

    def test_schemes_agree_on_flat_binary_tree(self, rng):
        # with two classes and shared scores the true-label scheme reuses one list
        X = rng.normal(size=(60, 1))
        y = (X[:, 0] > 0).astype(int)
        tree = build_tree([0, 1], 1)
        model = fit_gnb(X[:30], y[:30])
        table = calibrate(tree, [model], X[30:], y[30:])
        P = pvalue_matrix(X[:5], np.arange(5), tree, [model], table, RandomStream(1))
        own = table.layer_scores[0]
        U = RandomStream(1).uniforms(np.arange(5), tree.n_nodes)
        S = 1 - model.predict_proba(X[:5])
        for r in range(5):
            for k, nid in enumerate(tree.layers[0]):
                assert P[r, nid] == pytest.approx(smoothed_pvalue(own, S[r, k], U[r, nid]))
