"""Random forest classifier built from scratch on numpy.

Trees split on Gini impurity with sqrt-d feature subsampling, grown to
purity (or min_leaf), each on a seeded bootstrap sample. Feature
importances are mean decrease in impurity, averaged over trees and
normalized to sum 1. Ties between candidate splits go to the larger
impurity decrease, then the lower feature index, then the lower threshold,
so a single tree without bootstrap reproduces exhaustive greedy search.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import substream_rng


@dataclass
class TreeNode:
    counts: np.ndarray                 # class histogram of training rows here
    feature: int = -1                  # -1 marks a leaf
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


def _gini(counts: np.ndarray, n: int) -> float:
    if n == 0:
        return 0.0
    p = counts / n
    return 1.0 - float(p @ p)


@dataclass
class DecisionTree:
    root: TreeNode
    importance: np.ndarray             # unnormalized weighted impurity decrease

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        out = np.empty((x.shape[0], self.root.counts.shape[0]))
        for i, row in enumerate(x):
            node = self.root
            while not node.is_leaf:
                node = node.left if row[node.feature] <= node.threshold else node.right
            out[i] = node.counts / node.counts.sum()
        return out


def _best_split(x, y, idx, features, n_classes, min_leaf):
    """Best (feature, threshold, decrease) over candidate features, or None."""
    n = len(idx)
    parent_counts = np.bincount(y[idx], minlength=n_classes)
    parent_gini = _gini(parent_counts, n)
    best = None
    for f in features:
        values = x[idx, f]
        order = np.argsort(values, kind="stable")
        sorted_vals = values[order]
        sorted_y = y[idx][order]
        left_counts = np.zeros(n_classes)
        right_counts = parent_counts.astype(float).copy()
        for pos in range(n - 1):
            c = sorted_y[pos]
            left_counts[c] += 1
            right_counts[c] -= 1
            if sorted_vals[pos] == sorted_vals[pos + 1]:
                continue
            n_left = pos + 1
            n_right = n - n_left
            if n_left < min_leaf or n_right < min_leaf:
                continue
            child_gini = (n_left * _gini(left_counts, n_left)
                          + n_right * _gini(right_counts, n_right)) / n
            decrease = parent_gini - child_gini
            if decrease > 1e-15 and (best is None or decrease > best[2] + 1e-15):
                threshold = (sorted_vals[pos] + sorted_vals[pos + 1]) / 2.0
                best = (f, threshold, decrease)
    return best


def _grow(x, y, idx, n_classes, n_total, rng, max_features, min_leaf, importance):
    counts = np.bincount(y[idx], minlength=n_classes).astype(float)
    node = TreeNode(counts)
    n = len(idx)
    if n < 2 * min_leaf or np.count_nonzero(counts) <= 1:
        return node
    candidates = np.sort(rng.choice(x.shape[1], size=max_features, replace=False))
    split = _best_split(x, y, idx, candidates, n_classes, min_leaf)
    if split is None and max_features < x.shape[1]:
        # the sampled features were uninformative; fall back to all of them
        split = _best_split(x, y, idx, np.arange(x.shape[1]), n_classes, min_leaf)
    if split is None:
        return node
    f, threshold, decrease = split
    importance[f] += (n / n_total) * decrease
    mask = x[idx, f] <= threshold
    node.feature = f
    node.threshold = threshold
    node.left = _grow(x, y, idx[mask], n_classes, n_total, rng,
                      max_features, min_leaf, importance)
    node.right = _grow(x, y, idx[~mask], n_classes, n_total, rng,
                       max_features, min_leaf, importance)
    return node


@dataclass
class ForestModel:
    n_trees: int
    trees: list[DecisionTree]
    classes: np.ndarray
    seed: int
    feature_importances: np.ndarray = field(default=None)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        proba = np.zeros((x.shape[0], len(self.classes)))
        for tree in self.trees:
            proba += tree.predict_proba(x)
        return proba / len(self.trees)

    def predict(self, x: np.ndarray) -> np.ndarray:
        proba = self.predict_proba(x)
        return self.classes[np.argmax(proba, axis=1)]


def fit_forest(x: np.ndarray, labels: np.ndarray, n_trees: int = 200,
               seed: int = 0, bootstrap: bool = True,
               max_features: int | str = "sqrt",
               min_leaf: int = 1) -> ForestModel:
    """Train on clustering labels; deterministic per seed."""
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    if x.ndim != 2 or len(labels) != x.shape[0]:
        raise ValueError("x must be (m, d) with one label per row")
    classes, y = np.unique(labels, return_inverse=True)
    if len(classes) < 2:
        raise ValueError("need at least 2 classes to fit a classifier")
    n_classes = len(classes)
    m, d = x.shape
    if max_features == "sqrt":
        mf = max(1, int(np.sqrt(d)))
    elif max_features is None:
        mf = d
    else:
        mf = int(max_features)
        if not 1 <= mf <= d:
            raise ValueError(f"max_features must be in [1, {d}]")

    trees = []
    importance_sum = np.zeros(d)
    for t in range(n_trees):
        rng = substream_rng(seed, "tree", t)
        idx = rng.integers(0, m, size=m) if bootstrap else np.arange(m)
        importance = np.zeros(d)
        root = _grow(x, y, idx, n_classes, len(idx), rng, mf, min_leaf, importance)
        total = importance.sum()
        if total > 0:
            importance /= total
        trees.append(DecisionTree(root, importance))
        importance_sum += importance

    importances = importance_sum / n_trees
    total = importances.sum()
    if total > 0:
        importances /= total
    else:
        importances = np.full(d, 1.0 / d)
    return ForestModel(n_trees, trees, classes, seed, importances)


def feature_importances(forest: ForestModel) -> np.ndarray:
    """Normalized mean decrease in Gini impurity, one weight per feature."""
    return forest.feature_importances.copy()
