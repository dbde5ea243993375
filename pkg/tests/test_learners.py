import itertools

import numpy as np
import pytest

from misstmle import glm, learners, trees
from misstmle.core import RngStream, logit
from misstmle.learners import (DesignMatrix, LearnerSpec, SchemaError, expand_interactions,
                               fit_cart, fit_glm, fit_glm_interaction, fit_learner,
                               fit_random_forest, pairwise_terms, predict)


def dmat(values, names, family="gaussian"):
    return DesignMatrix(np.asarray(values, dtype=float), tuple(names), family)


class TestFitGlm:
    def test_two_point_line(self):
        x = dmat([[0.0], [1.0]], ("x",))
        model = fit_glm(x, np.array([1.0, 3.0]))
        assert model.fit.coef == pytest.approx([1.0, 2.0], abs=1e-12)

    def test_null_binomial_model(self):
        gen = np.random.default_rng(0)
        xv = gen.standard_normal((400, 2))
        y = np.repeat([0.0, 1.0], 200)
        model = fit_glm(dmat(xv, ("a", "b"), "binomial"), y)
        assert model.fit.coef[0] == pytest.approx(logit(y.mean()), abs=0.15)
        assert model.fit.coef[1:] == pytest.approx([0.0, 0.0], abs=0.2)
        assert model.fit.converged

    def test_matches_likelihood_grid_oracle(self):
        # 20-row logistic with one slope; brute-force the likelihood over a
        # fine (intercept, slope) grid and refine twice around the argmax
        gen = np.random.default_rng(42)
        xv = gen.standard_normal(20)
        y = (gen.random(20) < 1.0 / (1.0 + np.exp(-(0.3 + 0.8 * xv)))).astype(float)

        def loglik(b0, b1):
            eta = b0 + b1 * xv
            return float(np.sum(y * eta - np.log1p(np.exp(eta))))

        lo0, hi0, lo1, hi1 = -3.0, 3.0, -3.0, 3.0
        best = None
        for _ in range(4):
            b0s = np.linspace(lo0, hi0, 61)
            b1s = np.linspace(lo1, hi1, 61)
            vals = [(loglik(b0, b1), b0, b1) for b0 in b0s for b1 in b1s]
            _, b0, b1 = max(vals)
            span0 = (hi0 - lo0) / 10
            span1 = (hi1 - lo1) / 10
            lo0, hi0 = b0 - span0, b0 + span0
            lo1, hi1 = b1 - span1, b1 + span1
            best = (b0, b1)

        model = fit_glm(dmat(xv[:, None], ("x",), "binomial"), y)
        assert model.fit.coef[0] == pytest.approx(best[0], abs=1e-3)
        assert model.fit.coef[1] == pytest.approx(best[1], abs=1e-3)

    def test_gaussian_matches_closed_form(self):
        gen = np.random.default_rng(1)
        xv = gen.standard_normal((200, 3))
        y = xv @ np.array([1.0, -2.0, 0.5]) + 0.3 + gen.standard_normal(200)
        model = fit_glm(dmat(xv, ("a", "b", "c")), y)
        xm = np.hstack([np.ones((200, 1)), xv])
        beta = np.linalg.lstsq(xm, y, rcond=None)[0]
        assert model.fit.coef == pytest.approx(beta.tolist(), abs=1e-10)

    def test_collinear_column_dropped_and_named(self):
        gen = np.random.default_rng(2)
        a = gen.standard_normal(50)
        x = dmat(np.column_stack([a, 2 * a]), ("a", "twice_a"))
        model = fit_glm(x, a + 1.0)
        # either column may be kept; exactly one is dropped and named
        assert len(model.fit.dropped) == 1 and model.fit.dropped[0] in ("a", "twice_a")
        assert predict(model, x) == pytest.approx((a + 1.0).tolist(), abs=1e-9)

    def test_separation_flagged_not_fatal(self):
        xv = np.linspace(-1, 1, 30)[:, None]
        y = (xv[:, 0] > 0).astype(float)
        model = fit_glm(dmat(xv, ("x",), "binomial"), y)
        assert not model.fit.converged
        assert np.all(np.isfinite(model.fit.coef))


class TestExpandInteractions:
    def test_binary_product(self):
        x = dmat([[1.0, 0.0]], ("Z1", "Z3"))
        out = expand_interactions(x, [("Z1", "Z3")])
        assert out.names == ("Z1", "Z3", "Z1*Z3")
        assert out.values[0, 2] == 0.0

    def test_empty_terms_identity(self):
        x = dmat([[1.0, 2.0]], ("a", "b"))
        assert expand_interactions(x, []) is x

    def test_all_pairs_over_five(self):
        x = dmat(np.zeros((3, 5)), tuple("abcde"))
        out = expand_interactions(x, pairwise_terms(x.names))
        assert out.k == 5 + 10

    def test_duplicate_term_rejected(self):
        x = dmat([[1.0, 2.0]], ("a", "b"))
        with pytest.raises(SchemaError):
            expand_interactions(x, [("a", "b"), ("a", "b")])


class TestFitCart:
    def test_constant_response_single_leaf(self):
        x = dmat(np.arange(12, dtype=float)[:, None], ("x",))
        model = fit_cart(x, np.full(12, 3.5), min_leaf=1)
        assert model.tree.n_leaves == 1
        assert predict(model, x) == pytest.approx([3.5] * 12)

    def test_xor_exact_fit(self):
        # oracle: enumerating all split sequences on the 4-cell table shows a
        # depth-2 tree with zero training error exists; the fit must find it
        x = dmat([[0, 0], [0, 1], [1, 0], [1, 1]], ("Z1", "Z4"))
        y = np.array([0.0, 1.0, 1.0, 0.0])
        model = fit_cart(x, y, min_leaf=1, cp=1e-4)
        assert predict(model, x) == pytest.approx(y.tolist())
        assert model.tree.depth == 2

    def test_min_leaf_respected(self):
        gen = np.random.default_rng(3)
        x = dmat(gen.standard_normal((60, 2)), ("a", "b"))
        model = fit_cart(x, gen.standard_normal(60), min_leaf=5)
        tree = model.tree
        for v, _ in tree._walk():
            if tree.feature[v] == -1:
                assert tree.seg_end[v] - tree.seg_start[v] >= 5

    def test_training_impurity_never_worse_than_root(self):
        gen = np.random.default_rng(4)
        x = dmat((gen.random((100, 3)) < 0.5).astype(float), ("a", "b", "c"))
        y = gen.standard_normal(100)
        model = fit_cart(x, y)
        fitted = predict(model, x)
        assert np.sum((y - fitted) ** 2) <= np.sum((y - y.mean()) ** 2) + 1e-9

    def test_leaf_prediction_is_leaf_mean(self):
        gen = np.random.default_rng(5)
        x = dmat((gen.random((80, 2)) < 0.5).astype(float), ("a", "b"))
        y = gen.standard_normal(80)
        tree = model = fit_cart(x, y, min_leaf=5).tree
        leaves = tree.leaves_of(x.values)
        preds = tree.predict(x.values)
        for leaf in np.unique(leaves):
            members = tree.leaf_members(leaf)
            assert preds[leaves == leaf][0] == pytest.approx(float(y[members].mean()), abs=1e-12)


class TestFitRandomForest:
    def test_degenerate_forest_equals_cart(self):
        gen = np.random.default_rng(6)
        x = dmat((gen.random((90, 3)) < 0.4).astype(float), ("a", "b", "c"))
        y = gen.standard_normal(90)
        cart = fit_cart(x, y)
        forest = fit_random_forest(x, y, n_trees=1, rng=RngStream(3), mtry=3, bootstrap=False)
        assert predict(forest, x) == pytest.approx(predict(cart, x).tolist(), abs=1e-14)

    def test_constant_response(self):
        x = dmat(np.arange(30, dtype=float)[:, None], ("x",))
        model = fit_random_forest(x, np.ones(30), n_trees=5, rng=RngStream(4))
        assert predict(model, x) == pytest.approx([1.0] * 30)

    def test_beats_mean_learner_on_held_out(self):
        # held-out comparison oracle on a linear signal
        gen = np.random.default_rng(7)
        xv = gen.standard_normal((400, 3))
        y = xv @ np.array([1.0, 0.8, -0.5]) + 0.2 * gen.standard_normal(400)
        train = dmat(xv[:200], ("a", "b", "c"))
        test = dmat(xv[200:], ("a", "b", "c"))
        forest = fit_random_forest(train, y[:200], n_trees=500, rng=RngStream(5))
        mean_model = fit_learner(LearnerSpec("mean"), train, y[:200], RngStream(6))
        mse_rf = np.mean((y[200:] - predict(forest, test)) ** 2)
        mse_mean = np.mean((y[200:] - predict(mean_model, test)) ** 2)
        assert mse_rf <= mse_mean

    def test_prediction_is_mean_of_trees(self):
        gen = np.random.default_rng(8)
        x = dmat((gen.random((70, 3)) < 0.5).astype(float), ("a", "b", "c"))
        y = gen.standard_normal(70)
        model = fit_random_forest(x, y, n_trees=7, rng=RngStream(7))
        per_tree = np.column_stack([t.predict(x.values) for t in model.forest.trees])
        assert predict(model, x) == pytest.approx(per_tree.mean(axis=1).tolist(), abs=1e-12)

    def test_donor_rows_are_training_rows(self):
        gen = np.random.default_rng(9)
        x = (gen.random((50, 2)) < 0.5).astype(float)
        y = gen.standard_normal(50)
        forest = trees.fit_forest(x, y, 4, np.random.default_rng(0))
        for cand in forest.donor_rows(x[:6]):
            assert len(cand) > 0
            assert np.all((cand >= 0) & (cand < 50))


class TestPredict:
    def test_mean_learner_constant(self):
        x = dmat(np.arange(10, dtype=float)[:, None], ("x",))
        model = fit_learner(LearnerSpec("mean"), x, np.arange(10, dtype=float), RngStream(8))
        assert predict(model, x) == pytest.approx([4.5] * 10)

    def test_glm_residuals_orthogonal_to_columns(self):
        gen = np.random.default_rng(10)
        xv = gen.standard_normal((120, 3))
        y = xv @ np.array([0.5, 1.0, -1.0]) + gen.standard_normal(120)
        model = fit_glm(dmat(xv, ("a", "b", "c")), y)
        resid = y - predict(model, dmat(xv, ("a", "b", "c")))
        assert np.abs(xv.T @ resid).max() < 1e-8
        assert abs(resid.sum()) < 1e-8

    def test_schema_mismatch_names_column(self):
        x = dmat(np.zeros((5, 2)), ("a", "b"))
        model = fit_glm(x, np.arange(5, dtype=float))
        with pytest.raises(SchemaError, match="wrong"):
            predict(model, dmat(np.zeros((5, 2)), ("a", "wrong")))

    def test_binomial_outputs_clamped(self):
        x = dmat(np.linspace(-5, 5, 40)[:, None], ("x",), "binomial")
        y = (x.values[:, 0] > 0).astype(float)
        model = fit_glm(x, y)
        p = predict(model, x)
        assert p.min() >= 1e-6 and p.max() <= 1 - 1e-6


class TestRidge:
    def test_near_glm_on_clean_linear_data(self):
        gen = np.random.default_rng(11)
        xv = gen.standard_normal((300, 4))
        y = xv @ np.array([1.0, -1.0, 0.5, 0.0]) + 0.1 * gen.standard_normal(300)
        x = dmat(xv, ("a", "b", "c", "d"))
        ridge = fit_learner(LearnerSpec("ridge"), x, y, RngStream(9))
        glm_model = fit_glm(x, y)
        assert predict(ridge, x) == pytest.approx(predict(glm_model, x).tolist(), abs=0.05)

    def test_binomial_predictions_probabilities(self):
        gen = np.random.default_rng(12)
        xv = (gen.random((200, 3)) < 0.5).astype(float)
        y = (gen.random(200) < 0.3).astype(float)
        model = fit_learner(LearnerSpec("ridge"), dmat(xv, ("a", "b", "c"), "binomial"), y, RngStream(10))
        p = predict(model, dmat(xv, ("a", "b", "c"), "binomial"))
        assert np.all((p > 0) & (p < 1))


class TestPermutationEquivariance:
    def test_glm_and_cart_unchanged_under_row_permutation(self):
        gen = np.random.default_rng(13)
        xv = (gen.random((150, 3)) < 0.5).astype(float)
        y = xv @ np.array([1.0, 0.5, -0.5]) + gen.standard_normal(150)
        perm = gen.permutation(150)
        x1, x2 = dmat(xv, ("a", "b", "c")), dmat(xv[perm], ("a", "b", "c"))
        probe = dmat((gen.random((20, 3)) < 0.5).astype(float), ("a", "b", "c"))
        g1, g2 = fit_glm(x1, y), fit_glm(x2, y[perm])
        assert g1.fit.coef == pytest.approx(g2.fit.coef.tolist(), abs=1e-9)
        c1 = fit_learner(LearnerSpec("cart"), x1, y, RngStream(11))
        c2 = fit_learner(LearnerSpec("cart"), x2, y[perm], RngStream(11))
        assert predict(c1, probe) == pytest.approx(predict(c2, probe).tolist(), abs=1e-12)


class TestGlmInteraction:
    def test_expands_all_pairs(self):
        gen = np.random.default_rng(14)
        xv = (gen.random((200, 3)) < 0.5).astype(float)
        y = xv[:, 0] * xv[:, 1] + gen.standard_normal(200) * 0.1
        model = fit_glm_interaction(dmat(xv, ("a", "b", "c")), y)
        assert model.terms == (("a", "b"), ("a", "c"), ("b", "c"))
        fitted = predict(model, dmat(xv, ("a", "b", "c")))
        assert np.mean((y - fitted) ** 2) < 0.05

    def test_cell_means_learner_is_saturated(self):
        xv = np.array(list(itertools.product([0.0, 1.0], repeat=2)) * 10)
        gen = np.random.default_rng(15)
        y = xv[:, 0] + 2 * xv[:, 1] + gen.standard_normal(40) * 0.1
        x = dmat(xv, ("a", "b"))
        model = fit_learner(LearnerSpec("cell_means"), x, y, RngStream(12))
        fitted = predict(model, x)
        for pat in itertools.product([0.0, 1.0], repeat=2):
            rows = np.all(xv == pat, axis=1)
            assert fitted[rows][0] == pytest.approx(float(y[rows].mean()), abs=1e-12)
