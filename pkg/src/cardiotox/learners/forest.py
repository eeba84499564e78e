"""Gini decision trees and bagged random forests (classifier and regressor).

Each tree draws its bootstrap and feature subsets from a generator seeded by
(forest seed, tree index), so a forest is bit-identical for a fixed seed no
matter how many threads build it.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..dataset import LabeledDataset
from ..errors import InvalidInputError


@dataclass
class TreeNode:
    """Internal node (feature, threshold, children) or leaf (counts / value)."""

    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    class_counts: np.ndarray | None = None  # classifier leaves
    value: float | None = None  # regressor leaves

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())


def _gini_from_counts(counts: np.ndarray, total: int) -> float:
    if total == 0:
        return 0.0
    p = counts / total
    return 1.0 - float(np.dot(p, p))


def _best_gini_split(x, y, n_classes, feature_ids):
    """Best (feature, threshold, gain) over midpoint candidates.

    Ties break to the lowest feature index (features scanned ascending, strict
    improvement) and then the lowest threshold (first argmax within a feature).
    """
    n = len(y)
    parent_counts = np.bincount(y, minlength=n_classes)
    parent_gini = _gini_from_counts(parent_counts, n)
    counts_splits = np.arange(1, n, dtype=float)
    best = (None, None, 0.0)
    for f in feature_ids:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), y[order]] = 1.0
        left = np.cumsum(onehot, axis=0)[:-1]
        right = parent_counts - left
        nl = counts_splits
        nr = n - nl
        gini_l = 1.0 - ((left / nl[:, None]) ** 2).sum(axis=1)
        gini_r = 1.0 - ((right / nr[:, None]) ** 2).sum(axis=1)
        gain = parent_gini - (nl / n * gini_l + nr / n * gini_r)
        gain[xs[:-1] == xs[1:]] = -np.inf
        i = int(np.argmax(gain))
        if gain[i] > best[2]:
            best = (f, (xs[i] + xs[i + 1]) / 2.0, float(gain[i]))
    return best


def _best_sse_split(x, y, feature_ids):
    """Best split by within-node squared-error reduction (regression)."""
    n = len(y)
    total_sum = y.sum()
    total_sq = (y * y).sum()
    parent_sse = total_sq - total_sum * total_sum / n
    counts_splits = np.arange(1, n, dtype=float)
    tol = 1e-12 * max(1.0, abs(parent_sse))
    best = (None, None, 0.0)
    for f in feature_ids:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        ys = y[order]
        left_sum = np.cumsum(ys)[:-1]
        left_sq = np.cumsum(ys * ys)[:-1]
        nl = counts_splits
        nr = n - nl
        right_sum = total_sum - left_sum
        right_sq = total_sq - left_sq
        sse = (left_sq - left_sum**2 / nl) + (right_sq - right_sum**2 / nr)
        gain = parent_sse - sse
        gain[xs[:-1] == xs[1:]] = -np.inf
        i = int(np.argmax(gain))
        if gain[i] > best[2] + tol:
            best = (f, (xs[i] + xs[i + 1]) / 2.0, float(gain[i]))
    return best


def _leaf_mean(y: np.ndarray) -> float:
    # Unanimous targets return the exact value (float mean is not always exact).
    if np.all(y == y[0]):
        return float(y[0])
    return float(y.mean())


def tree_fit(
    x: np.ndarray,
    y: np.ndarray,
    max_depth: int | None,
    min_leaf: int,
    features_per_split: int,
    rng: np.random.Generator,
    n_classes: int | None = None,
    regression: bool = False,
) -> TreeNode:
    """Grow one tree by recursive best-gain splits over a random feature subset.

    Stops on max_depth, pure nodes, nodes smaller than min_leaf, or when no
    split improves the criterion.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidInputError("tree_fit needs a non-empty 2-D matrix")
    if not regression:
        y = y.astype(int)
        if n_classes is None:
            n_classes = int(y.max()) + 1 if y.size else 1
    else:
        y = y.astype(float)
    d = x.shape[1]
    features_per_split = min(max(features_per_split, 1), d)

    def make_leaf(yy):
        if regression:
            return TreeNode(value=_leaf_mean(yy))
        return TreeNode(class_counts=np.bincount(yy, minlength=n_classes))

    def grow(idx, depth):
        yy = y[idx]
        pure = np.all(yy == yy[0])
        if (
            pure
            or (max_depth is not None and depth >= max_depth)
            or len(idx) < min_leaf
            or len(idx) < 2
        ):
            return make_leaf(yy)
        if features_per_split < d:
            feats = np.sort(rng.choice(d, size=features_per_split, replace=False))
        else:
            feats = np.arange(d)
        xx = x[idx]
        if regression:
            f, threshold, gain = _best_sse_split(xx, yy, feats)
        else:
            f, threshold, gain = _best_gini_split(xx, yy, n_classes, feats)
        if f is None or gain <= 0.0:
            return make_leaf(yy)
        go_left = xx[:, f] <= threshold
        node = TreeNode(feature=int(f), threshold=float(threshold))
        node.left = grow(idx[go_left], depth + 1)
        node.right = grow(idx[~go_left], depth + 1)
        return node

    return grow(np.arange(x.shape[0]), 0)


def _tree_apply(node: TreeNode, row: np.ndarray) -> TreeNode:
    while not node.is_leaf:
        node = node.left if row[node.feature] <= node.threshold else node.right
    return node


@dataclass
class ForestModel:
    """Bagged Gini-tree ensemble voting over class indices."""

    trees: list[TreeNode]
    n_estimators: int
    max_depth: int | None
    features_per_split: int
    seed: int
    n_features: int
    n_classes: int
    min_leaf: int = 2

    def observed_max_depth(self) -> int:
        return max(t.depth() for t in self.trees)


@dataclass
class ForestRegressorModel:
    trees: list[TreeNode]
    n_estimators: int
    max_depth: int | None
    features_per_split: int
    seed: int
    n_features: int
    min_leaf: int = 2

    def observed_max_depth(self) -> int:
        return max(t.depth() for t in self.trees)


def _default_features_per_split(d: int) -> int:
    return max(1, math.ceil(math.sqrt(d)))


def forest_fit(
    dataset: LabeledDataset,
    n_estimators: int,
    max_depth: int | None = None,
    seed: int = 0,
    features_per_split: int | None = None,
    min_leaf: int = 2,
    threads: int = 1,
) -> ForestModel:
    """Fit n_estimators trees, each on its own N-row bootstrap."""
    if n_estimators < 1:
        raise InvalidInputError("n_estimators must be at least 1")
    x = dataset.matrix
    y = dataset.labels
    if x.shape[0] == 0:
        raise InvalidInputError("cannot fit a forest on an empty dataset")
    d = x.shape[1]
    fps = features_per_split if features_per_split is not None else _default_features_per_split(d)
    n_classes = len(dataset.class_names)

    def build(i: int) -> TreeNode:
        rng = np.random.default_rng((seed, i))
        boot = rng.integers(0, x.shape[0], x.shape[0])
        return tree_fit(x[boot], y[boot], max_depth, min_leaf, fps, rng, n_classes=n_classes)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(build, range(n_estimators)))
    else:
        trees = [build(i) for i in range(n_estimators)]
    return ForestModel(trees, n_estimators, max_depth, fps, seed, d, n_classes, min_leaf)


def forest_vote_counts(model: ForestModel, row: np.ndarray) -> np.ndarray:
    """Integer votes per class; sums to n_estimators exactly."""
    row = np.asarray(row, dtype=float)
    if row.shape != (model.n_features,):
        raise InvalidInputError(
            f"row has {row.shape} shape, model expects ({model.n_features},)"
        )
    votes = np.zeros(model.n_classes, dtype=int)
    for tree in model.trees:
        leaf = _tree_apply(tree, row)
        votes[int(np.argmax(leaf.class_counts))] += 1
    return votes


def forest_predict_proba(model: ForestModel, row: np.ndarray) -> np.ndarray:
    """Fraction of trees voting each class."""
    return forest_vote_counts(model, row) / model.n_estimators


def forest_predict(model: ForestModel, row: np.ndarray) -> int:
    """Majority-vote class; ties resolve to the lower class index."""
    return int(np.argmax(forest_vote_counts(model, row)))


def forest_predict_many(model: ForestModel, matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    return np.array([forest_predict(model, r) for r in matrix], dtype=int)


def forest_regress_fit(
    x: np.ndarray,
    y: np.ndarray,
    n_estimators: int,
    max_depth: int | None = None,
    seed: int = 0,
    features_per_split: int | None = None,
    min_leaf: int = 2,
    threads: int = 1,
) -> ForestRegressorModel:
    """Bagged regression trees; splits minimize within-node squared error."""
    if n_estimators < 1:
        raise InvalidInputError("n_estimators must be at least 1")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0 or y.shape != (x.shape[0],):
        raise InvalidInputError("x must be 2-D with one target per row")
    d = x.shape[1]
    fps = features_per_split if features_per_split is not None else _default_features_per_split(d)

    def build(i: int) -> TreeNode:
        rng = np.random.default_rng((seed, i))
        boot = rng.integers(0, x.shape[0], x.shape[0])
        return tree_fit(x[boot], y[boot], max_depth, min_leaf, fps, rng, regression=True)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(build, range(n_estimators)))
    else:
        trees = [build(i) for i in range(n_estimators)]
    return ForestRegressorModel(trees, n_estimators, max_depth, fps, seed, d, min_leaf)


def forest_regress_predict(model: ForestRegressorModel, row: np.ndarray) -> float:
    row = np.asarray(row, dtype=float)
    if row.shape != (model.n_features,):
        raise InvalidInputError(
            f"row has {row.shape} shape, model expects ({model.n_features},)"
        )
    values = np.array([_tree_apply(t, row).value for t in model.trees])
    if np.all(values == values[0]):
        return float(values[0])
    return float(values.mean())
