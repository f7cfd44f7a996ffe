"""Deterministic random-forest regression built from scratch on numpy.

Trees are CART regression trees with variance-reduction (sum-of-squares)
splits; the forest bags them over bootstrap resamples drawn from a
counter-based RNG keyed by (seed, tree index), so training is reproducible
and independent of both thread scheduling and sample order (callers sort
samples canonically before fitting).

Polynomial feature expansion produces every monomial of the inputs up to a
total degree, in a fixed order: degree ascending; within a degree, largest
exponent first, then exponent tuples in descending lexicographic order.
Degree 2 over (b, s, h) therefore yields
[1, b, s, h, b^2, s^2, h^2, b*s, b*h, s*h].
"""

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Dict, List, Sequence, Tuple

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


def _splitmix64(x: int) -> int:
    x &= _MASK64
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    """Independent per-tree stream derived from (seed, tree_index)."""
    return np.random.default_rng(_splitmix64(_splitmix64(seed) ^ (tree_index + 1)))


def monomial_exponents(n_features: int, degree: int) -> List[Tuple[int, ...]]:
    """Exponent tuples of all monomials up to total ``degree``, fixed order."""
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    if n_features < 1:
        raise ValueError("feature vector must be non-empty")
    out: List[Tuple[int, ...]] = [tuple([0] * n_features)]
    for d in range(1, degree + 1):
        exps = []
        for combo in combinations_with_replacement(range(n_features), d):
            e = [0] * n_features
            for i in combo:
                e[i] += 1
            exps.append(tuple(e))
        exps.sort(key=lambda e: (-max(e), tuple(-x for x in e)))
        out.extend(exps)
    return out


def polynomial_expand(features: Sequence[float], degree: int) -> np.ndarray:
    """Expand one feature vector into its monomial vector."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("features must be a non-empty 1-D vector")
    return expand_matrix(x[None, :], degree)[0]


def expand_matrix(X: np.ndarray, degree: int) -> np.ndarray:
    """Row-wise polynomial expansion of an (n, f) matrix."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] == 0:
        raise ValueError("X must be a non-empty 2-D matrix")
    cols = []
    for exps in monomial_exponents(X.shape[1], degree):
        col = np.ones(X.shape[0])
        for i, p in enumerate(exps):
            if p:
                col = col * X[:, i] ** p
        cols.append(col)
    return np.stack(cols, axis=1)


@dataclass
class RegressionTree:
    """CART regression tree over dense float features.

    Flat-array node storage: ``feature[n] < 0`` marks node ``n`` as a leaf
    whose prediction is ``value[n]``; internal nodes route ``x[feature] <=
    threshold`` to ``left`` else ``right``.
    """

    max_depth: int = 8
    min_leaf: int = 2
    feature: List[int] = field(default_factory=list)
    threshold: List[float] = field(default_factory=list)
    left: List[int] = field(default_factory=list)
    right: List[int] = field(default_factory=list)
    value: List[float] = field(default_factory=list)

    def fit(self, X: np.ndarray, y: np.ndarray) -> "RegressionTree":
        if len(y) == 0:
            raise ValueError("cannot fit a tree on zero samples")
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []
        self._grow(np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64), 0)
        return self

    def _new_node(self, y: np.ndarray) -> int:
        node = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(y.mean()))
        return node

    def _grow(self, X: np.ndarray, y: np.ndarray, depth: int) -> int:
        node = self._new_node(y)
        if depth >= self.max_depth or len(y) < 2 * self.min_leaf:
            return node
        split = self._best_split(X, y)
        if split is None:
            return node
        f, thr = split
        mask = X[:, f] <= thr
        self.feature[node] = f
        self.threshold[node] = thr
        self.left[node] = self._grow(X[mask], y[mask], depth + 1)
        self.right[node] = self._grow(X[~mask], y[~mask], depth + 1)
        return node

    def _best_split(self, X: np.ndarray, y: np.ndarray):
        n = len(y)
        order = np.argsort(X, axis=0, kind="stable")
        xs = np.take_along_axis(X, order, axis=0)
        ys = y[order]
        csum = np.cumsum(ys, axis=0)
        csq = np.cumsum(ys * ys, axis=0)
        total, total2 = csum[-1], csq[-1]
        n_left = np.arange(1, n, dtype=np.float64)[:, None]
        n_right = n - n_left
        ss_left = csq[:-1] - csum[:-1] ** 2 / n_left
        ss_right = (total2 - csq[:-1]) - (total - csum[:-1]) ** 2 / n_right
        total_ss = float(total2[0] - total[0] ** 2 / n) if X.shape[1] else 0.0
        gain = total_ss - (ss_left + ss_right)
        usable = (
            (xs[:-1] < xs[1:])
            & (n_left >= self.min_leaf)
            & (n_right >= self.min_leaf)
        )
        gain[~usable] = -np.inf
        # transpose so argmax ties break on lowest feature index, then lowest
        # threshold (positions are sorted ascending per feature)
        flat = gain.T.reshape(-1)
        best = int(np.argmax(flat))
        if not np.isfinite(flat[best]) or flat[best] <= 1e-12:
            return None
        f, pos = divmod(best, n - 1)
        thr = 0.5 * (xs[pos, f] + xs[pos + 1, f])
        if not (xs[pos, f] <= thr < xs[pos + 1, f]):
            thr = xs[pos, f]  # midpoint rounded into the wrong side; pin it
        return f, float(thr)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        value = np.asarray(self.value)
        node = np.zeros(len(X), dtype=np.intp)
        active = feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = X[idx, feature[cur]] <= threshold[cur]
            node[idx] = np.where(go_left, left[cur], right[cur])
            active[idx] = feature[node[idx]] >= 0
        return value[node]

    def leaf_values(self) -> np.ndarray:
        feat = np.asarray(self.feature)
        return np.asarray(self.value)[feat < 0]

    def to_dict(self) -> Dict:
        return {
            "feature": list(self.feature),
            "threshold": [float(t) for t in self.threshold],
            "left": list(self.left),
            "right": list(self.right),
            "value": [float(v) for v in self.value],
        }

    @classmethod
    def from_dict(cls, d: Dict, max_depth: int = 8, min_leaf: int = 2) -> "RegressionTree":
        tree = cls(max_depth=max_depth, min_leaf=min_leaf)
        tree.feature = [int(v) for v in d["feature"]]
        tree.threshold = [float(v) for v in d["threshold"]]
        tree.left = [int(v) for v in d["left"]]
        tree.right = [int(v) for v in d["right"]]
        tree.value = [float(v) for v in d["value"]]
        n = len(tree.feature)
        if not all(len(a) == n for a in (tree.threshold, tree.left, tree.right, tree.value)):
            raise ValueError("corrupt tree dict: array lengths differ")
        return tree


@dataclass
class RandomForest:
    n_trees: int = 100
    max_depth: int = 8
    min_leaf: int = 2
    seed: int = 0
    trees: List[RegressionTree] = field(default_factory=list)

    def fit(self, X: np.ndarray, y: np.ndarray) -> "RandomForest":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n = len(y)
        self.trees = []
        for t in range(self.n_trees):
            idx = tree_rng(self.seed, t).integers(0, n, size=n)
            tree = RegressionTree(max_depth=self.max_depth, min_leaf=self.min_leaf)
            self.trees.append(tree.fit(X[idx], y[idx]))
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        if not self.trees:
            raise ValueError("forest is not fitted")
        X = np.asarray(X, dtype=np.float64)
        acc = np.zeros(len(X))
        for tree in self.trees:
            acc += tree.predict(X)
        return acc / len(self.trees)

    def leaf_range(self) -> Tuple[float, float]:
        lo = min(float(t.leaf_values().min()) for t in self.trees)
        hi = max(float(t.leaf_values().max()) for t in self.trees)
        return lo, hi

    def to_dict(self) -> Dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "seed": self.seed,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: Dict) -> "RandomForest":
        forest = cls(
            n_trees=int(d["n_trees"]),
            max_depth=int(d["max_depth"]),
            min_leaf=int(d["min_leaf"]),
            seed=int(d["seed"]),
        )
        forest.trees = [
            RegressionTree.from_dict(td, forest.max_depth, forest.min_leaf)
            for td in d["trees"]
        ]
        return forest
