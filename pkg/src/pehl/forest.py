"""Random forest / extra random trees on parsed header features, with
Gini-based mean-decrease-in-impurity feature importance.

Every node stores its class counts, the fraction of the tree's training
data that reached it, and its Gini impurity, so importance scores can be
recomputed from the stored statistics alone. Categorical features split
by equality against one randomly drawn category; numeric features split
on a threshold (best midpoint for random forest, one uniform draw per
feature for extra trees). Ties in gain break toward the lowest feature
index and then the lowest threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

RANDOM_FOREST = "random-forest"
EXTRA_TREES = "extra-trees"


@dataclass
class TreeNode:
    class_counts: np.ndarray          # (2,) int counts at this node
    p_t: float                        # fraction of the tree's data reaching the node
    gini: float
    split_feature: int | None = None
    split_kind: str | None = None     # "numeric" | "categorical"
    threshold: float | None = None    # numeric threshold, or the category value
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    p_left: float = 0.0               # branch fractions, sum to 1 at internal nodes
    p_right: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.split_feature is None

    def positive_fraction(self) -> float:
        total = self.class_counts.sum()
        return float(self.class_counts[1] / total) if total else 0.5


@dataclass
class TreeEnsemble:
    trees: list[TreeNode]
    kind: str
    n_trees: int
    seed: int
    max_features: int
    feature_names: list[str]
    categorical_indices: list[int] = field(default_factory=list)


@dataclass
class MdiReport:
    mdi: np.ndarray
    ri: np.ndarray
    feature_names: list[str]

    def ranked(self):
        order = np.argsort(-self.mdi, kind="stable")
        return [(self.feature_names[i], float(self.mdi[i]), float(self.ri[i])) for i in order]


def _gini(c0: float, c1: float) -> float:
    n = c0 + c1
    return 1.0 - (c0 / n) ** 2 - (c1 / n) ** 2


def _best_numeric_midpoint(col, ys, n, c1, gini):
    """Best midpoint split by prefix-sum scan; None when all values tie."""
    order = np.argsort(col, kind="stable")
    xs = col[order]
    cum1 = np.cumsum(ys[order])
    ks = np.flatnonzero(xs[:-1] < xs[1:])
    if not len(ks):
        return None
    n_l = (ks + 1).astype(float)
    c1_l = cum1[ks].astype(float)
    c0_l = n_l - c1_l
    n_r = n - n_l
    c1_r = c1 - c1_l
    c0_r = n_r - c1_r
    g_l = 1.0 - (c0_l / n_l) ** 2 - (c1_l / n_l) ** 2
    g_r = 1.0 - (c0_r / n_r) ** 2 - (c1_r / n_r) ** 2
    gain = gini - (n_l / n) * g_l - (n_r / n) * g_r
    k = int(np.argmax(gain))
    return float(gain[k]), float((xs[ks[k]] + xs[ks[k] + 1]) / 2.0)


def _mask_gain(mask, ys, n, gini):
    n_l = float(mask.sum())
    if n_l == 0.0 or n_l == n:
        return None
    c1_l = float(ys[mask].sum())
    c0_l = n_l - c1_l
    n_r = n - n_l
    c1_r = float(ys.sum()) - c1_l
    c0_r = n_r - c1_r
    g_l = 1.0 - (c0_l / n_l) ** 2 - (c1_l / n_l) ** 2
    g_r = 1.0 - (c0_r / n_r) ** 2 - (c1_r / n_r) ** 2
    return gini - (n_l / n) * g_l - (n_r / n) * g_r


def _grow(X, y, idx, rng, kind, max_features, cat_set, n_root) -> TreeNode:
    ys = y[idx]
    n = len(idx)
    c1 = int(ys.sum())
    c0 = n - c1
    counts = np.array([c0, c1], dtype=np.int64)
    gini = _gini(float(c0), float(c1))
    node = TreeNode(class_counts=counts, p_t=n / n_root, gini=gini)
    if c0 == 0 or c1 == 0 or n < 2:
        return node

    d = X.shape[1]
    if kind == RANDOM_FOREST:
        cand = np.sort(rng.choice(d, size=min(max_features, d), replace=False))
    else:
        cand = np.arange(d)

    best_gain = 0.0
    best = None  # (feature, kind, threshold)
    nf = float(n)
    c1f = float(c1)
    for f in cand:
        col = X[idx, f]
        if int(f) in cat_set:
            cats = np.unique(col)
            if len(cats) < 2:
                continue
            c = cats[rng.integers(len(cats))]
            res = _mask_gain(col == c, ys, nf, gini)
            if res is not None and res > best_gain:
                best_gain, best = res, (int(f), "categorical", float(c))
        elif kind == RANDOM_FOREST:
            res = _best_numeric_midpoint(col, ys, nf, c1f, gini)
            if res is not None and res[0] > best_gain:
                best_gain, best = res[0], (int(f), "numeric", res[1])
        else:
            lo, hi = col.min(), col.max()
            if lo == hi:
                continue
            thr = lo + rng.random() * (hi - lo)
            res = _mask_gain(col <= thr, ys, nf, gini)
            if res is not None and res > best_gain:
                best_gain, best = res, (int(f), "numeric", float(thr))

    if best is None:
        return node

    f, skind, thr = best
    col = X[idx, f]
    mask = (col == thr) if skind == "categorical" else (col <= thr)
    left_idx, right_idx = idx[mask], idx[~mask]
    node.split_feature = f
    node.split_kind = skind
    node.threshold = thr
    node.p_left = len(left_idx) / n
    node.p_right = len(right_idx) / n
    node.left = _grow(X, y, left_idx, rng, kind, max_features, cat_set, n_root)
    node.right = _grow(X, y, right_idx, rng, kind, max_features, cat_set, n_root)
    return node


def train_forest(
    X,
    labels,
    kind: str = EXTRA_TREES,
    n_trees: int = 100,
    seed: int = 0,
    max_features: int | None = None,
    feature_names: list[str] | None = None,
    categorical_indices: list[int] | None = None,
) -> TreeEnsemble:
    X = np.asarray(X, dtype=float)
    y = np.asarray(labels).astype(np.int64)
    if X.ndim != 2 or len(X) == 0:
        raise DataError("training data must be a non-empty 2-D array")
    if len(X) != len(y):
        raise ValueError("feature rows do not match labels")
    if kind not in (RANDOM_FOREST, EXTRA_TREES):
        raise ValueError(f"unknown ensemble kind {kind!r}")
    d = X.shape[1]
    if max_features is None:
        max_features = int(np.ceil(np.sqrt(d))) if kind == RANDOM_FOREST else d
    cat_set = set(categorical_indices or [])
    names = feature_names if feature_names is not None else [f"f{i}" for i in range(d)]

    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        if kind == RANDOM_FOREST:
            idx = rng.integers(0, len(X), size=len(X))
        else:
            idx = np.arange(len(X))
        trees.append(_grow(X, y, idx, rng, kind, max_features, cat_set, len(idx)))

    return TreeEnsemble(
        trees=trees, kind=kind, n_trees=n_trees, seed=seed,
        max_features=max_features, feature_names=list(names),
        categorical_indices=sorted(cat_set),
    )


def _leaf_for(node: TreeNode, x) -> TreeNode:
    while not node.is_leaf:
        v = x[node.split_feature]
        if node.split_kind == "categorical":
            node = node.left if v == node.threshold else node.right
        else:
            node = node.left if v <= node.threshold else node.right
    return node


def predict_proba(ensemble: TreeEnsemble, x) -> float:
    """Mean over trees of the reached leaf's positive-class fraction."""
    x = np.asarray(x, dtype=float)
    if x.shape != (len(ensemble.feature_names),):
        raise ValueError(
            f"feature vector has shape {x.shape}, schema expects ({len(ensemble.feature_names)},)"
        )
    return float(np.mean([_leaf_for(t, x).positive_fraction() for t in ensemble.trees]))


def predict_proba_many(ensemble: TreeEnsemble, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.array([predict_proba(ensemble, row) for row in X])


def _accumulate_mdi(node: TreeNode, out: np.ndarray):
    if node.is_leaf:
        return
    drop = node.gini - node.p_left * node.left.gini - node.p_right * node.right.gini
    out[node.split_feature] += node.p_t * drop
    _accumulate_mdi(node.left, out)
    _accumulate_mdi(node.right, out)


def mdi_scores(ensemble: TreeEnsemble) -> MdiReport:
    """Per-feature impurity decrease, averaged over trees, plus
    max-normalized relative importance (zeros if nothing ever split)."""
    d = len(ensemble.feature_names)
    total = np.zeros(d)
    for tree in ensemble.trees:
        per_tree = np.zeros(d)
        _accumulate_mdi(tree, per_tree)
        total += per_tree
    mdi = total / ensemble.n_trees
    top = mdi.max() if d else 0.0
    ri = mdi / top if top > 0 else np.zeros(d)
    return MdiReport(mdi=mdi, ri=ri, feature_names=list(ensemble.feature_names))
