import numpy as np
import pytest

from moeplan.forest import (
    RandomForest,
    RegressionTree,
    expand_matrix,
    monomial_exponents,
    polynomial_expand,
    tree_rng,
)


class TestPolynomialExpand:
    def test_degree_one_is_affine_basis(self):
        assert polynomial_expand([2, 3, 4], 1).tolist() == [1, 2, 3, 4]

    def test_all_ones(self):
        assert polynomial_expand([1, 1, 1], 2).tolist() == [1.0] * 10

    def test_degree_two_documented_order(self):
        # [1, b, s, h, b^2, s^2, h^2, bs, bh, sh]
        assert polynomial_expand([2, 3, 4], 2).tolist() == [
            1, 2, 3, 4, 4, 9, 16, 6, 8, 12
        ]

    def test_empty_vector_rejected(self):
        with pytest.raises(ValueError):
            polynomial_expand([], 2)

    def test_degree_zero_rejected(self):
        with pytest.raises(ValueError):
            polynomial_expand([1.0], 0)

    def test_two_feature_degree_two(self):
        # [1, v, b, v^2, b^2, vb]
        assert polynomial_expand([5, 7], 2).tolist() == [1, 5, 7, 25, 49, 35]

    def test_matrix_matches_rowwise(self):
        X = np.array([[2.0, 3.0, 4.0], [1.0, 1.0, 1.0]])
        M = expand_matrix(X, 2)
        assert M[0].tolist() == polynomial_expand(X[0], 2).tolist()
        assert M[1].tolist() == polynomial_expand(X[1], 2).tolist()

    def test_exponent_count(self):
        # C(f + d, d) monomials up to total degree d
        assert len(monomial_exponents(3, 2)) == 10
        assert len(monomial_exponents(2, 3)) == 10
        assert len(monomial_exponents(4, 1)) == 5


class TestRegressionTree:
    def test_fits_step_function_exactly(self):
        X = np.array([[x] for x in range(10)], dtype=float)
        y = np.where(X[:, 0] < 5, 1.0, 3.0)
        tree = RegressionTree(max_depth=3, min_leaf=1).fit(X, y)
        assert np.allclose(tree.predict(X), y)

    def test_constant_target_single_leaf(self):
        X = np.arange(20, dtype=float).reshape(-1, 1)
        y = np.full(20, 2.5)
        tree = RegressionTree().fit(X, y)
        assert len(tree.feature) == 1 and tree.feature[0] == -1
        assert tree.predict(X).tolist() == [2.5] * 20

    def test_min_leaf_respected(self):
        X = np.arange(8, dtype=float).reshape(-1, 1)
        y = X[:, 0] ** 2
        tree = RegressionTree(max_depth=10, min_leaf=4).fit(X, y)
        leaves = tree.leaf_values()
        assert len(leaves) <= 2

    def test_dict_round_trip(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(0, 1, (50, 4))
        y = X @ np.array([1.0, 2.0, 0.5, -1.0]) + 5
        tree = RegressionTree().fit(X, y)
        clone = RegressionTree.from_dict(tree.to_dict())
        probe = rng.uniform(0, 1, (200, 4))
        assert np.array_equal(tree.predict(probe), clone.predict(probe))

    def test_corrupt_dict_rejected(self):
        tree = RegressionTree().fit(np.ones((4, 1)), np.arange(4.0))
        d = tree.to_dict()
        d["left"] = d["left"][:-1] + []
        d["left"] = []
        with pytest.raises(ValueError, match="lengths differ"):
            RegressionTree.from_dict(d)


class TestRandomForest:
    def test_reproducible_given_seed(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(0, 10, (100, 3))
        y = X[:, 0] + np.sin(X[:, 1]) + 0.1 * rng.standard_normal(100)
        probe = rng.uniform(0, 10, (1000, 3))
        a = RandomForest(n_trees=20, seed=7).fit(X, y).predict(probe)
        b = RandomForest(n_trees=20, seed=7).fit(X, y).predict(probe)
        assert np.array_equal(a, b)

    def test_different_seed_differs(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(0, 10, (100, 3))
        y = X[:, 0] + 0.3 * rng.standard_normal(100)
        probe = rng.uniform(0, 10, (50, 3))
        a = RandomForest(n_trees=10, seed=1).fit(X, y).predict(probe)
        b = RandomForest(n_trees=10, seed=2).fit(X, y).predict(probe)
        assert not np.array_equal(a, b)

    def test_prediction_within_leaf_range(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(0, 1, (80, 2))
        y = rng.uniform(0.5, 2.0, 80)
        forest = RandomForest(n_trees=30, seed=0).fit(X, y)
        lo, hi = forest.leaf_range()
        preds = forest.predict(rng.uniform(-1, 2, (500, 2)))
        assert (preds >= lo - 1e-12).all() and (preds <= hi + 1e-12).all()
        assert lo > 0

    def test_unfitted_predict_rejected(self):
        with pytest.raises(ValueError, match="not fitted"):
            RandomForest().predict(np.ones((1, 2)))

    def test_dict_round_trip(self):
        rng = np.random.default_rng(9)
        X = rng.uniform(0, 1, (60, 3))
        y = X.sum(axis=1)
        forest = RandomForest(n_trees=12, seed=4).fit(X, y)
        clone = RandomForest.from_dict(forest.to_dict())
        probe = rng.uniform(0, 1, (100, 3))
        assert np.array_equal(forest.predict(probe), clone.predict(probe))

    def test_tree_rng_streams_independent(self):
        a = tree_rng(0, 0).integers(0, 1000, 10)
        b = tree_rng(0, 1).integers(0, 1000, 10)
        c = tree_rng(0, 0).integers(0, 1000, 10)
        assert np.array_equal(a, c)
        assert not np.array_equal(a, b)
