"""Linear models: OLS, bidirectional BIC-stepwise selection, k-fold CV.

BIC is n*ln(RSS/n) + k*ln(n) with k counting the intercept. Inside the
BIC the RSS is floored at 1e-24 of the target's total sum of squares:
below that level residuals are pure floating-point noise, and clamping
them makes interpolating models compare by parameter count alone, so
stepwise still prunes redundant features from exact fits.

Qualitative features enter through one-hot encoding with the first level
as reference; encoding happens inside the fitters and the fitted model
re-applies it at prediction time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadK, RankDeficient

_RSS_FLOOR = 1e-300


@dataclass
class DesignMatrix:
    feature_names: list
    X: np.ndarray            # (n, p)
    y: np.ndarray            # (n,)
    categorical: frozenset = frozenset()

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be (n, p) with len(y) == n")
        if self.X.shape[1] != len(self.feature_names):
            raise ValueError("feature_names length must match X columns")
        if not np.all(np.isfinite(self.X)) or not np.all(np.isfinite(self.y)):
            raise ValueError("design matrix holds non-finite values")
        self.categorical = frozenset(self.categorical)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.feature_names.index(name)]

    def subset_rows(self, idx) -> "DesignMatrix":
        return DesignMatrix(list(self.feature_names), self.X[idx], self.y[idx],
                            self.categorical)


@dataclass
class OneHotEncoder:
    """Per-feature level lists; the first level of each is the reference."""
    levels: dict

    def encode(self, names, X):
        out_names = []
        cols = []
        for j, name in enumerate(names):
            if name in self.levels:
                levs = self.levels[name]
                for lev in levs[1:]:
                    out_names.append(f"{name}={lev:g}")
                    cols.append((X[:, j] == lev).astype(float))
            else:
                out_names.append(name)
                cols.append(X[:, j])
        mat = np.column_stack(cols) if cols else np.empty((X.shape[0], 0))
        return out_names, mat


def encode_categorical(d: DesignMatrix):
    """(encoded DesignMatrix, encoder or None)."""
    if not d.categorical:
        return d, None
    levels = {}
    for name in d.feature_names:
        if name in d.categorical:
            levels[name] = sorted(set(d.column(name).tolist()))
    enc = OneHotEncoder(levels)
    names, X = enc.encode(d.feature_names, d.X)
    return DesignMatrix(names, X, d.y), enc


@dataclass
class LinearModel:
    intercept: float
    coefficients: dict
    selected_features: list
    rss: float
    bic: float
    r2: float
    n: int
    encoder: OneHotEncoder | None = None
    raw_features: list = field(default_factory=list)

    def predict(self, X: np.ndarray, names=None) -> np.ndarray:
        """Predict for rows of X; `names` labels the columns of X.

        When the model was fitted with categorical features, X must carry
        the raw (un-encoded) columns and names.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if names is None:
            names = self.raw_features if self.encoder else list(self.coefficients)
        if self.encoder is not None:
            names, X = self.encoder.encode(list(names), X)
        out = np.full(X.shape[0], self.intercept)
        for fname, coef in self.coefficients.items():
            out += coef * X[:, names.index(fname)]
        return out

    def predict_design(self, d: DesignMatrix) -> np.ndarray:
        return self.predict(d.X, d.feature_names)


def bic_score(n: int, rss: float, n_params: int, tss: float = 0.0) -> float:
    floor = max(1e-24 * tss, _RSS_FLOOR)
    return n * math.log(max(rss, floor) / n) + n_params * math.log(n)


def _fit_named(names, X, y) -> tuple:
    """OLS on already-numeric columns. Returns (intercept, coefs, rss, bic)."""
    n = X.shape[0]
    A = np.column_stack([np.ones(n), X])
    if n <= A.shape[1] - 1:
        raise RankDeficient(f"n={n} too small for {A.shape[1] - 1} features")
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise RankDeficient("design matrix is rank deficient")
    beta, _, _, _ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ beta
    rss = float(resid @ resid)
    tss = float(np.sum((y - y.mean()) ** 2))
    return (float(beta[0]), dict(zip(names, beta[1:].tolist())), rss,
            bic_score(n, rss, len(names) + 1, tss))


def fit_ols(d: DesignMatrix, drop_aliased: bool = False) -> LinearModel:
    """Least-squares fit on all non-constant features.

    Constant columns are excluded (they alias the intercept); remaining
    collinearity raises RankDeficient unless drop_aliased is set, in which
    case aliased columns are removed greedily the way R's lm drops them.
    """
    enc_d, enc = encode_categorical(d)
    if drop_aliased:
        idx = _max_independent(enc_d, [j for j in range(enc_d.p)
                                       if np.ptp(enc_d.X[:, j]) > 0])
        keep = [enc_d.feature_names[j] for j in idx]
    else:
        keep = [name for j, name in enumerate(enc_d.feature_names)
                if np.ptp(enc_d.X[:, j]) > 0]
    X = enc_d.X[:, [enc_d.feature_names.index(nm) for nm in keep]]
    intercept, coefs, rss, bic = _fit_named(keep, X, enc_d.y)
    tss = float(np.sum((d.y - d.y.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    return LinearModel(intercept, coefs, keep, rss, bic, r2, d.n,
                       encoder=enc, raw_features=list(d.feature_names))


def _subset_fit(enc_d: DesignMatrix, subset: tuple):
    names = [enc_d.feature_names[j] for j in subset]
    X = enc_d.X[:, list(subset)]
    return _fit_named(names, X, enc_d.y)


def _max_independent(enc_d: DesignMatrix, candidates) -> tuple:
    """Greedy maximal subset of columns independent of each other and the
    intercept; aliased columns drop out the way R's lm treats them."""
    n = enc_d.n
    A = np.ones((n, 1))
    kept = []
    for j in candidates:
        cand = np.column_stack([A, enc_d.X[:, j]])
        if cand.shape[1] <= n and np.linalg.matrix_rank(cand) == cand.shape[1]:
            A = cand
            kept.append(j)
    return tuple(kept)


def _descend(enc_d: DesignMatrix, nonconst, start):
    """Bidirectional single-feature descent from one starting subset."""
    current = start
    state = _subset_fit(enc_d, current)
    while True:
        best = None
        moves = [tuple(f for f in current if f != j) for j in current]
        moves += [tuple(sorted(current + (j,))) for j in nonconst if j not in current]
        for cand in moves:
            try:
                fit = _subset_fit(enc_d, cand)
            except RankDeficient:
                continue
            if fit[3] < state[3] - 1e-12 and (best is None or fit[3] < best[1][3]):
                best = (cand, fit)
        if best is None:
            return current, state
        current, state = best


def stepwise_bic(d: DesignMatrix) -> LinearModel:
    """Bidirectional stepwise selection.

    The primary descent starts from the full model, with aliased and
    constant columns dropped first the way R's lm treats them; a second
    descent from the intercept-only model guards against suppressor
    configurations that trap the full-start descent in a local minimum,
    and the lower-BIC endpoint wins. Each step evaluates every
    single-feature drop and add and takes the move with the lowest BIC,
    stopping when no move improves. The returned BIC is never above the
    full model's.
    """
    if d.p < 2:
        raise RankDeficient("stepwise needs at least 2 candidate features")
    enc_d, enc = encode_categorical(d)
    nonconst = tuple(j for j in range(enc_d.p) if np.ptp(enc_d.X[:, j]) > 0)
    full = _max_independent(enc_d, nonconst)
    if not full:
        raise RankDeficient("no usable candidate features")
    current, state = _descend(enc_d, nonconst, full)
    alt_current, alt_state = _descend(enc_d, nonconst, ())
    if alt_state[3] < state[3] - 1e-12:
        current, state = alt_current, alt_state
    intercept, coefs, rss, cur_bic = state

    tss = float(np.sum((d.y - d.y.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    return LinearModel(intercept, coefs, [enc_d.feature_names[j] for j in current],
                       rss, cur_bic, r2, d.n, encoder=enc,
                       raw_features=list(d.feature_names))


def kfold_cv(d: DesignMatrix, fitter, k: int, seed: int = 0):
    """(r2, rmse) of pooled out-of-fold predictions.

    `fitter` maps a DesignMatrix to a model exposing predict_design.
    Folds are a seeded disjoint partition; k = n gives leave-one-out.
    """
    if k < 2 or k > d.n:
        raise BadK(f"k must be in [2, n]; got k={k}, n={d.n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(d.n)
    preds = np.empty(d.n)
    for fold in np.array_split(order, k):
        mask = np.ones(d.n, dtype=bool)
        mask[fold] = False
        model = fitter(d.subset_rows(mask))
        preds[fold] = model.predict_design(d.subset_rows(fold))
    resid = d.y - preds
    rmse = float(np.sqrt(np.mean(resid ** 2)))
    tss = float(np.sum((d.y - d.y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / tss if tss > 0 else 1.0
    return r2, rmse
