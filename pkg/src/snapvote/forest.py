"""Random forest classifier built from Gini CART trees."""

import math
from dataclasses import dataclass

import numpy as np

from snapvote.errors import ShapeError


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    max_features: object = "sqrt"  # "sqrt", a fraction in (0, 1], or an int count
    max_depth: int = None
    min_samples_leaf: int = 1
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.min_samples_leaf < 1:
            raise ValueError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError(f"max_depth must be >= 0, got {self.max_depth}")

    def n_split_features(self, n_features):
        mf = self.max_features
        if mf == "sqrt":
            m = int(math.isqrt(n_features))
        elif isinstance(mf, float):
            if not 0.0 < mf <= 1.0:
                raise ValueError(f"max_features fraction must be in (0, 1], got {mf}")
            m = int(mf * n_features)
        elif isinstance(mf, int):
            m = mf
        else:
            raise ValueError(f"unsupported max_features {mf!r}")
        return min(max(m, 1), n_features)


@dataclass
class Tree:
    """Flat binary tree. ``feature[i] == -1`` marks node ``i`` as a leaf.

    Samples with ``x[feature] <= threshold`` go to ``left``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, K) training class counts reaching each node

    @property
    def n_nodes(self):
        return len(self.feature)

    def apply(self, X):
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while rows.size:
            f = self.feature[node[rows]]
            internal = f >= 0
            rows, f = rows[internal], f[internal]
            if not rows.size:
                break
            cur = node[rows]
            go_left = X[rows, f] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
        return node

    def predict_proba(self, X):
        c = self.counts[self.apply(X)].astype(np.float64)
        return c / c.sum(axis=1, keepdims=True)


def _best_split(X, y, K, feats, min_leaf):
    """Best Gini split among ``feats`` for the rows in ``X``/``y``.

    Returns ``(impurity, feature, threshold)`` or None when no feature admits a
    split. Impurity is the size-weighted child Gini times the node size; ties go
    to the lowest feature index, then the lowest threshold.
    """
    n = X.shape[0]
    if n < 2:
        return None
    feats = np.sort(feats)
    vals = X[:, feats]
    order = np.argsort(vals, axis=0, kind="stable")
    svals = np.take_along_axis(vals, order, axis=0)
    onehot = np.eye(K, dtype=np.int64)[y[order]]  # (n, f, K)
    cum = np.cumsum(onehot, axis=0)
    left = cum[:-1]  # split after position i
    right = cum[-1:] - left
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    imp = (n_left - (left ** 2).sum(axis=2) / n_left) + (n_right - (right ** 2).sum(axis=2) / n_right)
    valid = (svals[:-1] < svals[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    imp = np.where(valid, imp, np.inf)
    best_pos = np.argmin(imp, axis=0)  # first (lowest threshold) per feature
    best_imp = imp[best_pos, np.arange(len(feats))]
    j = int(np.argmin(best_imp))  # first (lowest index) among equal impurities
    if not np.isfinite(best_imp[j]):
        return None
    i = best_pos[j]
    lo, hi = svals[i, j], svals[i + 1, j]
    thr = (lo + hi) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return float(best_imp[j]), int(feats[j]), float(thr)


def fit_tree(X, y, K, cfg, rng):
    """Grow one CART tree on ``(X, y)`` (no bootstrap here)."""
    n, d = X.shape
    m = cfg.n_split_features(d)
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y[idx], minlength=K))
        return len(feature) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        c = counts[node]
        if (np.count_nonzero(c) <= 1 or len(idx) < 2 * cfg.min_samples_leaf
                or (cfg.max_depth is not None and depth >= cfg.max_depth)):
            continue
        perm = rng.permutation(d)
        Xn, yn = X[idx], y[idx]
        split = _best_split(Xn, yn, K, perm[:m], cfg.min_samples_leaf)
        start = m
        # like common CART implementations, keep drawing features if the first
        # batch is constant on this node
        while split is None and start < d:
            split = _best_split(Xn, yn, K, perm[start:start + m], cfg.min_samples_leaf)
            start += m
        if split is None:
            continue
        _, f, thr = split
        go_left = Xn[:, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(counts, dtype=np.int64).reshape(-1, K),
    )


class RandomForestModel:
    def __init__(self, trees, n_classes, n_features):
        if not trees:
            raise ValueError("a forest needs at least one tree")
        self.trees = list(trees)
        self.n_classes = n_classes
        self.n_features = n_features

    def predict_proba(self, X):
        return rf_predict_proba(self, X)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


def rf_fit(X, y, cfg, n_classes=None):
    """Fit ``cfg.n_trees`` trees, tree ``t`` seeded with ``cfg.seed + t``.

    Each tree sees a bootstrap resample of ``n`` rows (unless disabled) and
    considers a fresh random feature subset at every node.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError("cannot fit a forest on an empty matrix")
    if y.shape != (X.shape[0],):
        raise ShapeError(f"X has {X.shape[0]} rows but y has {len(y)} labels")
    if not np.all(np.isfinite(X)):
        raise ValueError("forest input contains non-finite values")
    K = int(y.max()) + 1 if n_classes is None else n_classes
    if y.min() < 0 or y.max() >= K:
        raise ValueError(f"labels must lie in [0, {K})")
    n = X.shape[0]
    trees = []
    for t in range(cfg.n_trees):
        rng = np.random.default_rng(cfg.seed + t)
        idx = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
        trees.append(fit_tree(X[idx], y[idx], K, cfg, rng))
    return RandomForestModel(trees, K, X.shape[1])


def rf_predict_proba(model, X):
    """Mean of per-tree leaf class frequencies; rows sum to 1."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ShapeError(
            f"forest was fit on {model.n_features} features, got input with shape {X.shape}"
        )
    total = np.zeros((X.shape[0], model.n_classes))
    for tree in model.trees:
        total += tree.predict_proba(X)
    return total / len(model.trees)
