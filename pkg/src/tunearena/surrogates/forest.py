"""Random forest regression built from CART trees.

Features are small non-negative integers (configuration parameters), which
lets split search run on per-value histograms instead of sorting, and lets
full-grid prediction paint each leaf's hyper-rectangle directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from ..space import DomainError

_LEAF = -1


@dataclass(frozen=True)
class RegressionTree:
    feature: np.ndarray    # split feature per node, -1 at leaves
    threshold: np.ndarray  # go left iff x[feature] <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray      # mean target of the node's samples
    depth: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] != _LEAF)
        while active.size:
            n = node[active]
            go_left = X[active, self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = active[self.feature[node[active]] != _LEAF]
        return self.value[node]

    def leaves(self, lows, highs):
        """Yield ``(lo, hi, value)`` integer boxes covering ``[lows, highs]``."""
        stack = [(0, np.array(lows, dtype=np.int64), np.array(highs, dtype=np.int64))]
        while stack:
            i, lo, hi = stack.pop()
            f = self.feature[i]
            if f == _LEAF:
                yield lo, hi, self.value[i]
                continue
            cut = int(np.floor(self.threshold[i]))
            if cut >= lo[f]:
                h = hi.copy()
                h[f] = min(hi[f], cut)
                stack.append((self.left[i], lo, h))
            if cut + 1 <= hi[f]:
                l = lo.copy()
                l[f] = max(lo[f], cut + 1)
                stack.append((self.right[i], l, hi))


@dataclass(frozen=True)
class ForestModel:
    trees: List[RegressionTree]
    max_depth: Optional[int]
    trees_count: int
    feature_subset_size: int


def _best_split(Xn, yn, features, n_min):
    """Best variance-reduction split among ``features``; None if none separates."""
    best = None
    total = yn.sum()
    n = len(yn)
    for f in features:
        col = Xn[:, f]
        counts = np.bincount(col)
        nz = np.flatnonzero(counts)
        if nz.size < 2:
            continue
        sums = np.bincount(col, weights=yn)
        n_left = np.cumsum(counts[nz])[:-1]
        s_left = np.cumsum(sums[nz])[:-1]
        n_right = n - n_left
        ok = (n_left >= n_min) & (n_right >= n_min)
        if not ok.any():
            continue
        # maximising sum^2/n on both sides is equivalent to minimising child SSE
        score = s_left ** 2 / n_left + (total - s_left) ** 2 / n_right
        score[~ok] = -np.inf
        k = int(np.argmax(score))
        if best is None or score[k] > best[0]:
            best = (score[k], f, (nz[k] + nz[k + 1]) / 2.0)
    return best


def _grow(X, y, max_depth, subset_size, rng, min_samples_leaf=1):
    feature, threshold, left, right, value = [], [], [], [], []
    n_features = X.shape[1]
    max_seen = 0

    def new_node(v):
        feature.append(_LEAF)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(v)
        return len(value) - 1

    root = new_node(float(y.mean()))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        max_seen = max(max_seen, depth)
        yn = y[idx]
        if len(idx) < 2 * min_samples_leaf or (max_depth is not None and depth >= max_depth):
            continue
        if np.all(yn == yn[0]):
            continue
        Xn = X[idx]
        order = rng.permutation(n_features)
        split = _best_split(Xn, yn, order[:subset_size], min_samples_leaf)
        if split is None:
            # keep drawing features until some split separates the node
            for f in order[subset_size:]:
                split = _best_split(Xn, yn, [f], min_samples_leaf)
                if split is not None:
                    break
        if split is None:
            continue
        _, f, thr = split
        go_left = Xn[:, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        a = new_node(float(y[li].mean()))
        b = new_node(float(y[ri].mean()))
        feature[node], threshold[node], left[node], right[node] = f, thr, a, b
        stack.append((b, ri, depth + 1))
        stack.append((a, li, depth + 1))
    return RegressionTree(np.array(feature, dtype=np.int64), np.array(threshold),
                          np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                          np.array(value), max_seen)


def forest_fit(X, y, rng: np.random.Generator, trees_count: int = 100, max_depth: Optional[int] = 10,
               feature_subset_size: int = 2, bootstrap: bool = True) -> ForestModel:
    """Fit a bagged forest of CART regression trees.

    Parameters
    ----------
    X : array of shape (n, d)
        Non-negative integer features.
    y : array of shape (n,)
    rng : numpy Generator
        Drives bootstrap resampling and per-split feature subsets.
    trees_count, max_depth, feature_subset_size
        ``max_depth=None`` grows trees until leaves are pure.
    bootstrap : bool
        Resample ``n`` rows with replacement for each tree.
    """
    X = np.asarray(X, dtype=np.int64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise DomainError("cannot fit a forest on an empty sample set")
    if X.ndim != 2 or len(X) != len(y):
        raise DomainError("X must be (n, d) with n == len(y)")
    if (X < 0).any():
        raise DomainError("forest features must be non-negative integers")
    subset = max(1, min(feature_subset_size, X.shape[1]))
    trees = []
    for _ in range(trees_count):
        if bootstrap:
            rows = rng.integers(0, len(y), size=len(y))
            trees.append(_grow(X[rows], y[rows], max_depth, subset, rng))
        else:
            trees.append(_grow(X, y, max_depth, subset, rng))
    return ForestModel(trees, max_depth, trees_count, subset)


def forest_predict(model: ForestModel, X) -> np.ndarray:
    """Mean of per-tree predictions for each row of ``X``."""
    X = np.asarray(X, dtype=np.int64)
    single = X.ndim == 1
    X = X.reshape(-1, X.shape[-1])
    total = np.zeros(len(X))
    for tree in model.trees:
        total += tree.predict(X)
    out = total / len(model.trees)
    return out[0] if single else out


def forest_predict_grid(model: ForestModel, lows, highs) -> np.ndarray:
    """Predictions for every integer point of the box ``[lows, highs]``.

    Returns an array of shape ``highs - lows + 1`` in C order, equal to
    :func:`forest_predict` on the enumerated box but far cheaper for large
    boxes since each leaf is written as one slice.
    """
    lows = np.asarray(lows, dtype=np.int64)
    highs = np.asarray(highs, dtype=np.int64)
    grid = np.zeros(tuple(highs - lows + 1))
    boxes = [(lo - lows, hi - lows, v) for tree in model.trees for lo, hi, v in tree.leaves(lows, highs)]
    los = np.array([b[0] for b in boxes])
    his = np.array([b[1] for b in boxes])
    # one slab of the first dimension at a time keeps the accumulator in cache;
    # boxes stay in tree order so each point sums trees like forest_predict
    for a in range(grid.shape[0]):
        slab = grid[a]
        for k in np.flatnonzero((los[:, 0] <= a) & (a <= his[:, 0])):
            lo, hi, v = boxes[k]
            slab[tuple(slice(x, y + 1) for x, y in zip(lo[1:], hi[1:]))] += v
    grid /= len(model.trees)
    return grid
