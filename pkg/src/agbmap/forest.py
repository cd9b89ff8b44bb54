"""Random-forest regression on CART trees, built for determinism.

Trees are grown on bootstrap samples with per-node feature subsampling
(mtry). Numeric features split on thresholds; qualitative features split
on category subsets found by ordering categories by their node-mean target,
which is optimal for squared error. Every tree draws from its own stream
spawned off the master seed, so results do not depend on fitting order or
worker count.

Permutation importance (%IncMSE) follows the out-of-bag protocol: per tree,
the relative out-of-bag MSE increase after permuting one feature, averaged
over trees; the whole measurement can be repeated with fresh seeds to get
a mean and spread per feature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDesign
from .linear import DesignMatrix


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 500
    mtry: int | None = None   # None -> ceil(p / 3)
    min_leaf: int = 5
    max_depth: int | None = None

    def resolve_mtry(self, p: int) -> int:
        m = self.mtry if self.mtry is not None else math.ceil(p / 3)
        return max(1, min(m, p))


@dataclass
class Tree:
    feature: list = field(default_factory=list)    # -1 marks a leaf
    threshold: list = field(default_factory=list)  # numeric splits
    left_cats: list = field(default_factory=list)  # categorical splits, values routed left
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)      # node mean of the target

    def add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left_cats.append(None)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0])
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if rows.size == 0:
                continue
            f = self.feature[node]
            if f < 0:
                out[rows] = self.value[node]
                continue
            xv = X[rows, f]
            if self.left_cats[node] is not None:
                go_left = np.isin(xv, self.left_cats[node])
            else:
                go_left = xv <= self.threshold[node]
            stack.append((self.left[node], rows[go_left]))
            stack.append((self.right[node], rows[~go_left]))
        return out

    def to_dict(self) -> dict:
        return {"feature": self.feature, "threshold": self.threshold,
                "left_cats": self.left_cats, "left": self.left,
                "right": self.right, "value": self.value}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(list(d["feature"]), list(d["threshold"]), list(d["left_cats"]),
                   list(d["left"]), list(d["right"]), list(d["value"]))


def _best_numeric_split(xv, y, min_leaf):
    order = np.argsort(xv, kind="stable")
    xs = xv[order]
    ys = y[order]
    n = xs.size
    csum = np.cumsum(ys)
    csq = np.cumsum(ys ** 2)
    total_sum = csum[-1]
    total_sq = csq[-1]
    i = np.arange(min_leaf, n - min_leaf + 1)  # left block sizes
    if i.size == 0:
        return None
    valid = xs[i - 1] < xs[i]  # cannot split between equal values
    if not valid.any():
        return None
    i = i[valid]
    sse_left = csq[i - 1] - csum[i - 1] ** 2 / i
    rs = total_sum - csum[i - 1]
    sse_right = (total_sq - csq[i - 1]) - rs ** 2 / (n - i)
    sse = sse_left + sse_right
    j = int(np.argmin(sse))
    thr = 0.5 * (xs[i[j] - 1] + xs[i[j]])
    return float(sse[j]), ("num", thr)


def _best_categorical_split(xv, y, min_leaf):
    cats, inverse = np.unique(xv, return_inverse=True)
    if cats.size < 2:
        return None
    sums = np.bincount(inverse, weights=y, minlength=cats.size)
    counts = np.bincount(inverse, minlength=cats.size)
    order = np.argsort(sums / counts, kind="stable")
    # scanning the mean-ordered categories covers the optimal L2 partition
    csum = np.cumsum(sums[order])
    ccount = np.cumsum(counts[order])
    csq_by_cat = np.bincount(inverse, weights=y ** 2, minlength=cats.size)
    csq = np.cumsum(csq_by_cat[order])
    total_sum, total_count, total_sq = csum[-1], ccount[-1], csq[-1]
    best = None
    for b in range(cats.size - 1):
        nl = ccount[b]
        nr = total_count - nl
        if nl < min_leaf or nr < min_leaf:
            continue
        sse = (csq[b] - csum[b] ** 2 / nl) \
            + ((total_sq - csq[b]) - (total_sum - csum[b]) ** 2 / nr)
        if best is None or sse < best[0]:
            left = sorted(float(c) for c in cats[order[:b + 1]])
            best = (float(sse), ("cat", left))
    return best


def _grow(tree, X, y, rows, depth, cat_idx, mtry, params, rng):
    node = tree.add_node()
    ysub = y[rows]
    tree.value[node] = float(ysub.mean())
    if (rows.size < 2 * params.min_leaf
            or (params.max_depth is not None and depth >= params.max_depth)
            or np.ptp(ysub) == 0.0):
        return node
    p = X.shape[1]
    feats = rng.choice(p, size=mtry, replace=False) if mtry < p else np.arange(p)
    best = None
    for f in sorted(feats):
        xv = X[rows, f]
        if f in cat_idx:
            cand = _best_categorical_split(xv, ysub, params.min_leaf)
        else:
            cand = _best_numeric_split(xv, ysub, params.min_leaf)
        if cand is not None and (best is None or cand[0] < best[0]):
            best = (cand[0], f, cand[1])
    if best is None:
        return node
    _, f, (kind, spec) = best
    xv = X[rows, f]
    if kind == "cat":
        go_left = np.isin(xv, spec)
        tree.left_cats[node] = spec
    else:
        go_left = xv <= spec
        tree.threshold[node] = spec
    tree.feature[node] = int(f)
    tree.left[node] = _grow(tree, X, y, rows[go_left], depth + 1, cat_idx, mtry, params, rng)
    tree.right[node] = _grow(tree, X, y, rows[~go_left], depth + 1, cat_idx, mtry, params, rng)
    return node


@dataclass
class Forest:
    trees: list
    feature_names: list
    categorical: frozenset
    params: ForestParams
    seed: int | None
    oob_error: float
    y_min: float
    y_max: float
    inbag: np.ndarray | None = None  # (n_trees, n) bool, training-time only

    def _align(self, X, names):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if names is not None and list(names) != list(self.feature_names):
            cols = [list(names).index(f) for f in self.feature_names]
            X = X[:, cols]
        return X

    def predict(self, X: np.ndarray, names=None) -> np.ndarray:
        X = self._align(X, names)
        acc = np.zeros(X.shape[0])
        for t in self.trees:
            acc += t.predict(X)
        return acc / len(self.trees)

    def predict_design(self, d: DesignMatrix) -> np.ndarray:
        return self.predict(d.X, d.feature_names)


def fit_random_forest(d: DesignMatrix, params: ForestParams | None = None,
                      seed: int = 0) -> Forest:
    if d.n == 0 or d.p == 0:
        raise EmptyDesign("design matrix has no rows or no features")
    params = params or ForestParams()
    mtry = params.resolve_mtry(d.p)
    cat_idx = frozenset(d.feature_names.index(f) for f in d.categorical)
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = root.spawn(params.n_trees)
    trees = []
    inbag = np.zeros((params.n_trees, d.n), dtype=bool)
    for t, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        boot = rng.integers(0, d.n, size=d.n)
        inbag[t, np.unique(boot)] = True
        tree = Tree()
        _grow(tree, d.X, d.y, boot, 0, cat_idx, mtry, params, rng)
        trees.append(tree)

    # out-of-bag error over samples covered by at least one tree
    oob_sum = np.zeros(d.n)
    oob_cnt = np.zeros(d.n)
    for t, tree in enumerate(trees):
        rows = np.flatnonzero(~inbag[t])
        if rows.size:
            oob_sum[rows] += tree.predict(d.X[rows])
            oob_cnt[rows] += 1
    covered = oob_cnt > 0
    if covered.any():
        oob_pred = oob_sum[covered] / oob_cnt[covered]
        oob_error = float(np.mean((d.y[covered] - oob_pred) ** 2))
    else:
        oob_error = float("nan")
    seed_tag = int(seed) if isinstance(seed, (int, np.integer)) else None
    return Forest(trees, list(d.feature_names), frozenset(d.categorical), params,
                  seed_tag, oob_error, float(d.y.min()), float(d.y.max()), inbag)


@dataclass
class ImportanceResult:
    feature_names: list
    mean: np.ndarray            # %IncMSE per feature
    sd: np.ndarray
    per_repetition: np.ndarray  # (repetitions, p)


def rf_importance(d: DesignMatrix, params: ForestParams | None = None,
                  repetitions: int = 50, seed: int = 0) -> ImportanceResult:
    """%IncMSE per feature over `repetitions` independently seeded forests.

    Per tree: relative OOB MSE increase after permuting one feature's
    out-of-bag values, averaged over trees and scaled to percent. A feature
    the forest never splits on scores exactly 0.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    params = params or ForestParams()
    var_floor = 1e-12 * max(float(np.var(d.y)), 1.0)
    streams = np.random.SeedSequence(seed).spawn(repetitions)
    per_rep = np.zeros((repetitions, d.p))
    for r, ss in enumerate(streams):
        forest_ss, perm_ss = ss.spawn(2)
        forest = fit_random_forest(d, params, seed=forest_ss)
        rng = np.random.default_rng(perm_ss)
        increases = np.zeros((len(forest.trees), d.p))
        used = np.zeros(len(forest.trees), dtype=bool)
        for t, tree in enumerate(forest.trees):
            rows = np.flatnonzero(~forest.inbag[t])
            if rows.size < 2:
                continue
            used[t] = True
            Xo = d.X[rows]
            base = float(np.mean((d.y[rows] - tree.predict(Xo)) ** 2))
            denom = max(base, var_floor)
            for j in range(d.p):
                perm = rng.permutation(rows.size)
                Xp = Xo.copy()
                Xp[:, j] = Xo[perm, j]
                mse = float(np.mean((d.y[rows] - tree.predict(Xp)) ** 2))
                increases[t, j] = (mse - base) / denom
        per_rep[r] = 100.0 * increases[used].mean(axis=0)
    return ImportanceResult(list(d.feature_names), per_rep.mean(axis=0),
                            per_rep.std(axis=0), per_rep)
