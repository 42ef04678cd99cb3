"""Conventional classifiers written against numpy: LR, decision tree, KNN, Gaussian NB, random forest.

Labels are 0/1 (1 = dominant hand). Every model exposes ``predict_proba`` giving
P(class 1); hard predictions threshold it at 0.5 with ties going to class 1,
except bagging, whose majority vote breaks ties toward class 0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, FeatureMismatch, NonFiniteFeature, SingleClassLabels


class BaselineKind(enum.Enum):
    LOGISTIC_REGRESSION = "lr"
    DECISION_TREE = "dt"
    KNN = "knn"
    GAUSSIAN_NB = "nb"
    RANDOM_FOREST = "rf"

    @classmethod
    def parse(cls, value: "BaselineKind | str") -> "BaselineKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise DataError(f"unknown baseline kind {value!r}") from None


DEFAULT_PARAMS: dict[BaselineKind, dict] = {
    BaselineKind.LOGISTIC_REGRESSION: {"max_iter": 100, "lr": 1.0, "l2": 1e-4},
    BaselineKind.DECISION_TREE: {"max_depth": 12, "min_samples_split": 2},
    BaselineKind.KNN: {"k": 5},
    BaselineKind.GAUSSIAN_NB: {"var_smoothing": 1e-9},
    BaselineKind.RANDOM_FOREST: {"n_trees": 100, "max_depth": 12, "min_samples_split": 2,
                                 "max_features": "sqrt", "bootstrap": True},
}


def _check_xy(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y).astype(int)
    if x.ndim != 2 or len(x) != len(y):
        raise DataError("features must be a 2-D array with one label per row")
    if not np.all(np.isfinite(x)):
        raise NonFiniteFeature("features contain NaN or infinity")
    if len(np.unique(y)) < 2:
        raise SingleClassLabels("training labels contain a single class")
    return x, y


# --------------------------------------------------------------------------- models


class LogisticRegression:
    """Full-batch gradient descent on mean cross-entropy over standardized inputs."""

    def __init__(self, max_iter: int = 100, lr: float = 1.0, l2: float = 1e-4):
        self.max_iter, self.lr, self.l2 = max_iter, lr, l2

    def fit(self, x, y, rng=None):
        self.mu = x.mean(axis=0)
        self.sd = np.where(x.std(axis=0) > 0, x.std(axis=0), 1.0)
        z = (x - self.mu) / self.sd
        w = np.zeros(x.shape[1])
        b = 0.0
        for _ in range(self.max_iter):
            p = _sigmoid(z @ w + b)
            g = p - y
            w -= self.lr * (z.T @ g / len(y) + self.l2 * w)
            b -= self.lr * g.mean()
        self.w, self.b = w, b
        return self

    def predict_proba(self, x):
        return _sigmoid(((x - self.mu) / self.sd) @ self.w + self.b)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class DecisionTree:
    """CART with Gini impurity. Nodes live in flat arrays; leaves store P(class 1)."""

    def __init__(self, max_depth: int = 12, min_samples_split: int = 2, max_features=None):
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.max_features = max_features

    def _n_features(self, p: int) -> int:
        mf = self.max_features
        if mf is None:
            return p
        if mf == "sqrt":
            return max(1, int(math.sqrt(p)))
        return max(1, min(p, int(mf)))

    def fit(self, x, y, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        n, p = x.shape
        m = self._n_features(p)
        feat, thr, left, right, value = [], [], [], [], []

        def new_node(idx):
            feat.append(-1)
            thr.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(float(y[idx].mean()))
            return len(feat) - 1

        stack = [(new_node(np.arange(n)), np.arange(n), 0)]
        while stack:
            node, idx, depth = stack.pop()
            ys = y[idx]
            pos = ys.sum()
            if depth >= self.max_depth or len(idx) < self.min_samples_split or pos in (0, len(idx)):
                continue
            cand = np.arange(p) if m >= p else rng.choice(p, size=m, replace=False)
            best = _best_split(x[idx], ys, cand)
            if best is None:
                continue
            f, t = best
            mask = x[idx, f] <= t
            li, ri = idx[mask], idx[~mask]
            feat[node], thr[node] = f, t
            left[node], right[node] = new_node(li), new_node(ri)
            stack.append((right[node], ri, depth + 1))
            stack.append((left[node], li, depth + 1))
        self.feature = np.array(feat)
        self.threshold = np.array(thr)
        self.left = np.array(left)
        self.right = np.array(right)
        self.value = np.array(value)
        return self

    def predict_proba(self, x):
        node = np.zeros(len(x), dtype=int)
        active = self.feature[node] >= 0
        while np.any(active):
            i = np.flatnonzero(active)
            nd = node[i]
            go_left = x[i, self.feature[nd]] <= self.threshold[nd]
            node[i] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.value[node]

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


def _best_split(x: np.ndarray, y: np.ndarray, candidates: np.ndarray) -> tuple[int, float] | None:
    """Lowest weighted Gini over candidate features; thresholds at midpoints of distinct values."""
    n = len(y)
    best_score, best = np.inf, None
    for f in candidates:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        ys = y[order]
        valid = np.flatnonzero(xs[1:] > xs[:-1])  # split after position i
        if len(valid) == 0:
            continue
        n_left = valid + 1.0
        pos_left = np.cumsum(ys)[valid]
        pos_total = ys.sum()
        n_right = n - n_left
        pos_right = pos_total - pos_left
        gini_l = 1 - (pos_left / n_left) ** 2 - (1 - pos_left / n_left) ** 2
        gini_r = 1 - (pos_right / n_right) ** 2 - (1 - pos_right / n_right) ** 2
        score = (n_left * gini_l + n_right * gini_r) / n
        j = int(np.argmin(score))
        if score[j] < best_score - 1e-12:
            best_score = score[j]
            i = valid[j]
            t = (xs[i] + xs[i + 1]) / 2
            # adjacent floats can round the midpoint up onto the right value
            best = (int(f), float(t if t < xs[i + 1] else xs[i]))
    return best


class KNN:
    """Brute-force Euclidean k nearest neighbours; P(class 1) is the neighbour vote share."""

    def __init__(self, k: int = 5):
        self.k = k

    def fit(self, x, y, rng=None):
        self.x, self.y = x, y
        return self

    def predict_proba(self, x):
        k = min(self.k, len(self.x))
        # direct differences keep a training point exactly at distance 0 from itself
        chunk = max(1, 4_000_000 // max(1, self.x.size))
        out = []
        for s in range(0, len(x), chunk):
            d = ((x[s:s + chunk, None, :] - self.x[None, :, :]) ** 2).sum(axis=2)
            # stable sort so equal distances resolve to the earlier training row
            nn = np.argsort(d, axis=1, kind="stable")[:, :k]
            out.append(self.y[nn].mean(axis=1))
        return np.concatenate(out)


class GaussianNB:
    def __init__(self, var_smoothing: float = 1e-9):
        self.var_smoothing = var_smoothing

    def fit(self, x, y, rng=None):
        self.classes = np.array([0, 1])
        self.prior = np.array([np.mean(y == c) for c in self.classes])
        self.mean = np.stack([x[y == c].mean(axis=0) for c in self.classes])
        var = np.stack([x[y == c].var(axis=0) for c in self.classes])
        # per-feature floor keeps the model invariant to per-feature rescaling
        floor = self.var_smoothing * np.maximum(x.var(axis=0), 1e-300)
        self.var = var + floor
        return self

    def predict_proba(self, x):
        ll = np.stack([
            np.log(self.prior[c]) - 0.5 * np.sum(np.log(2 * np.pi * self.var[c])
                                                 + (x - self.mean[c]) ** 2 / self.var[c], axis=1)
            for c in range(2)
        ], axis=1)
        ll -= ll.max(axis=1, keepdims=True)
        p = np.exp(ll)
        return p[:, 1] / p.sum(axis=1)


class RandomForest:
    """Trees on bootstrap resamples with per-split feature subsampling; probabilities averaged.

    Tree ``i`` draws from ``default_rng([seed, i])``.
    """

    def __init__(self, n_trees: int = 100, max_depth: int = 12, min_samples_split: int = 2,
                 max_features="sqrt", bootstrap: bool = True, seed: int = 0):
        self.n_trees, self.max_depth = n_trees, max_depth
        self.min_samples_split, self.max_features = min_samples_split, max_features
        self.bootstrap, self.seed = bootstrap, seed

    def fit(self, x, y, rng=None):
        self.trees = []
        for i in range(self.n_trees):
            r = np.random.default_rng([self.seed, i])
            idx = r.integers(0, len(y), len(y)) if self.bootstrap else np.arange(len(y))
            if len(np.unique(y[idx])) < 2:
                idx = np.arange(len(y))
            tree = DecisionTree(self.max_depth, self.min_samples_split, self.max_features)
            self.trees.append(tree.fit(x[idx], y[idx], r))
        return self

    def predict_proba(self, x):
        return np.mean([t.predict_proba(x) for t in self.trees], axis=0)


# --------------------------------------------------------------------------- public API


@dataclass
class TrainedBaseline:
    kind: BaselineKind
    params: dict
    features: list[str]
    seed: int
    model: object
    members: list = field(default_factory=list)  # bagging members; empty for a plain fit

    @property
    def bagged(self) -> bool:
        return bool(self.members)


def _make(kind: BaselineKind, params: dict, seed: int):
    if kind is BaselineKind.LOGISTIC_REGRESSION:
        return LogisticRegression(**params)
    if kind is BaselineKind.DECISION_TREE:
        return DecisionTree(params["max_depth"], params["min_samples_split"], params.get("max_features"))
    if kind is BaselineKind.KNN:
        return KNN(**params)
    if kind is BaselineKind.GAUSSIAN_NB:
        return GaussianNB(**params)
    return RandomForest(seed=seed, **params)


def _params(kind: BaselineKind, overrides: dict | None) -> dict:
    params = {**DEFAULT_PARAMS[kind], **(overrides or {})}
    for k, v in params.items():
        if isinstance(v, (int, float)) and not isinstance(v, bool) and v <= 0 and k != "l2":
            raise DataError(f"{kind.value}: parameter {k} must be positive")
    return params


def train_baseline(kind, x, y, seed: int = 0, features: Sequence[str] | None = None,
                   params: dict | None = None) -> TrainedBaseline:
    kind = BaselineKind.parse(kind)
    x, y = _check_xy(x, y)
    p = _params(kind, params)
    model = _make(kind, p, seed).fit(x, y, np.random.default_rng(seed))
    names = list(features) if features is not None else [f"f{i}" for i in range(x.shape[1])]
    return TrainedBaseline(kind, p, names, seed, model)


def bagged(kind, x, y, seed: int = 0, n_estimators: int = 10, features: Sequence[str] | None = None,
           params: dict | None = None, bootstrap: bool = True) -> TrainedBaseline:
    """Majority vote over members fit on same-size resamples drawn with replacement.

    Member ``i`` resamples with ``default_rng([seed, 1000 + i])`` and trains with seed ``seed + i``.
    """
    kind = BaselineKind.parse(kind)
    x, y = _check_xy(x, y)
    if n_estimators < 1:
        raise DataError("n_estimators must be >= 1")
    p = _params(kind, params)
    members = []
    for i in range(n_estimators):
        r = np.random.default_rng([seed, 1000 + i])
        idx = r.integers(0, len(y), len(y)) if bootstrap else np.arange(len(y))
        if len(np.unique(y[idx])) < 2:
            idx = np.arange(len(y))
        members.append(_make(kind, p, seed + i).fit(x[idx], y[idx], np.random.default_rng(seed + i)))
    names = list(features) if features is not None else [f"f{i}" for i in range(x.shape[1])]
    return TrainedBaseline(kind, p, names, seed, None, members)


def _align(model: TrainedBaseline, x, features: Sequence[str] | None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if features is None:
        if x.shape[1] != len(model.features):
            raise FeatureMismatch(f"expected {len(model.features)} columns, got {x.shape[1]}")
        return x
    pos = {n: i for i, n in enumerate(features)}
    missing = [n for n in model.features if n not in pos]
    if missing:
        raise FeatureMismatch(f"missing features: {', '.join(missing)}")
    return x[:, [pos[n] for n in model.features]]


def predict(model: TrainedBaseline, x, features: Sequence[str] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Labels and P(class 1). For bagging the probability is the class-1 vote share."""
    x = _align(model, x, features)
    if not np.all(np.isfinite(x)):
        raise NonFiniteFeature("features contain NaN or infinity")
    if model.members:
        votes = np.stack([(m.predict_proba(x) >= 0.5).astype(int) for m in model.members])
        share = votes.mean(axis=0)
        return (share > 0.5).astype(int), share
    proba = model.model.predict_proba(x)
    return (proba >= 0.5).astype(int), proba


def accuracy(model: TrainedBaseline, x, y, features=None) -> float:
    return float(np.mean(predict(model, x, features)[0] == np.asarray(y)) * 100.0)
