"""Gradient-boosted trees on the four interaction features.

Logistic loss, second-order split gain, exact thresholds (midpoints between
consecutive distinct values), left branch on ``x <= threshold``. Importance is
each feature's share of total split gain.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .graph import neighborhood_counts
from .tracer import FEATURES, FeatureVector

FORMAT = "cliip-gbdt"
VERSION = 1


class TrainingError(ValueError):
    pass


class UndefinedMetricError(ValueError):
    pass


@dataclass
class GBDTParams:
    n_rounds: int = 100
    max_depth: int = 4
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0
    leaf_clamp: float = 4.0
    balance_classes: bool = True

    @classmethod
    def from_config(cls, cfg) -> "GBDTParams":
        return cls(cfg.n_rounds, cfg.max_depth, cfg.learning_rate, cfg.reg_lambda,
                   cfg.min_child_weight, cfg.leaf_clamp)


@dataclass
class Tree:
    feature: list = field(default_factory=list)  # -1 marks a leaf
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)

    def add(self, feature=-1, threshold=0.0, value=0.0) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64).reshape(-1, len(FEATURES))
        node = np.zeros(len(X), dtype=np.int64)
        feat = np.asarray(self.feature)
        thr = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        active = feat[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = X[rows, feat[nd]] <= thr[nd]
            node[rows] = np.where(go_left, left[nd], right[nd])
            active = feat[node] >= 0
        return np.asarray(self.value)[node]

    def walk(self, x) -> float:
        """Single-row traversal, mirrors :meth:`predict`."""
        k = 0
        while self.feature[k] >= 0:
            k = self.left[k] if x[self.feature[k]] <= self.threshold[k] else self.right[k]
        return self.value[k]


@dataclass
class TreeEnsemble:
    trees: list
    learning_rate: float = 0.1
    leaf_clamp: float = 4.0
    importance: np.ndarray = field(default_factory=lambda: np.zeros(len(FEATURES)))
    gains: np.ndarray = field(default_factory=lambda: np.zeros(len(FEATURES)))

    def margin(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64).reshape(-1, len(FEATURES))
        out = np.zeros(len(X))
        for t in self.trees:
            out += t.predict(X)
        return self.learning_rate * out

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.margin(X))

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "features": list(FEATURES),
            "learning_rate": self.learning_rate,
            "leaf_clamp": self.leaf_clamp,
            "importance": [float(v) for v in self.importance],
            "gains": [float(v) for v in self.gains],
            "trees": [asdict(t) for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsemble":
        if d.get("format") != FORMAT or d.get("version") != VERSION:
            raise ValueError(f"unsupported model format {d.get('format')!r} v{d.get('version')}")
        trees = [Tree(**t) for t in d["trees"]]
        return cls(trees, d["learning_rate"], d["leaf_clamp"], np.asarray(d["importance"]),
                   np.asarray(d.get("gains", d["importance"])))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TreeEnsemble":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def _as_xy(data, labels=None):
    if labels is not None:
        return np.asarray(data, dtype=np.float64).reshape(-1, len(FEATURES)), np.asarray(labels, dtype=np.float64)
    rows = list(data)
    if rows and isinstance(rows[0], FeatureVector):
        X = np.array([r.as_array() for r in rows]).reshape(-1, len(FEATURES))
        y = np.array([r.label for r in rows], dtype=np.float64)
        return X, y
    raise TypeError("pass FeatureVector rows or (X, y)")


def _grow(X, g, h, order, params, gains) -> Tree:
    tree = Tree()

    def leaf_value(rows):
        v = -g[rows].sum() / (h[rows].sum() + params.reg_lambda)
        return float(np.clip(v, -params.leaf_clamp, params.leaf_clamp))

    def build(sorted_rows, depth) -> int:
        rows = sorted_rows[0]
        node = tree.add(value=leaf_value(rows))
        if depth >= params.max_depth or len(rows) < 2:
            return node
        best = (0.0, -1, -1)
        for f in range(X.shape[1]):
            s = sorted_rows[f]
            gain, pos = kernels.best_split(X[s, f], g[s], h[s], params.reg_lambda,
                                           params.min_child_weight)
            if pos >= 0 and gain > best[0]:
                best = (gain, f, pos)
        gain, f, pos = best
        if f < 0:
            return node
        s = sorted_rows[f]
        lo, hi = X[s[pos], f], X[s[pos + 1], f]
        thr = 0.5 * (lo + hi)
        if not lo <= thr < hi:
            thr = lo
        goes_left = np.zeros(len(X), dtype=bool)
        goes_left[s[: pos + 1]] = True
        gains[f] += gain
        tree.feature[node] = f
        tree.threshold[node] = float(thr)
        left = [r[goes_left[r]] for r in sorted_rows]
        right = [r[~goes_left[r]] for r in sorted_rows]
        tree.left[node] = build(left, depth + 1)
        tree.right[node] = build(right, depth + 1)
        return node

    build(order, 0)
    return tree


def fit_gbdt(X, y, params: GBDTParams | None = None, init: TreeEnsemble | None = None,
             n_rounds: int | None = None) -> TreeEnsemble:
    """Boost ``n_rounds`` trees on (X, y); with ``init`` the new trees continue from its margin."""
    params = params or GBDTParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rounds = params.n_rounds if n_rounds is None else n_rounds
    w = np.ones(len(y))
    if params.balance_classes:
        n_pos = y.sum()
        if 0 < n_pos < len(y):
            w[y == 1] = (len(y) - n_pos) / n_pos
    order = [np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])]
    if init is None:
        model = TreeEnsemble([], params.learning_rate, params.leaf_clamp)
        F = np.zeros(len(y))
    else:
        model = TreeEnsemble(list(init.trees), init.learning_rate, init.leaf_clamp,
                             init.importance.copy(), init.gains.copy())
        F = model.margin(X)
    gains = model.gains.astype(np.float64).copy()
    for _ in range(rounds):
        p = _sigmoid(F)
        g = w * (p - y)
        h = w * p * (1.0 - p)
        tree = _grow(X, g, h, order, params, gains)
        model.trees.append(tree)
        F += model.learning_rate * tree.predict(X)
    model.gains = gains
    total = gains.sum()
    model.importance = gains / total if total > 0 else np.zeros_like(gains)
    return model


def predict(model: TreeEnsemble, fv) -> float | np.ndarray:
    """Probability for one FeatureVector, or a vector of them for a feature matrix."""
    if isinstance(fv, FeatureVector):
        return float(model.predict_proba(fv.as_array())[0])
    return model.predict_proba(fv)


def auc(scores, labels) -> float:
    """P(random positive outscores random negative), ties counting one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes")
    order = np.argsort(s, kind="mergesort")
    ss = s[order]
    ranks = np.empty(len(s))
    # average rank within each run of ties
    edges = np.flatnonzero(np.diff(ss)) + 1
    starts = np.concatenate(([0], edges))
    stops = np.concatenate((edges, [len(s)]))
    avg = (starts + stops + 1) / 2.0
    ranks[order] = np.repeat(avg, stops - starts)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class TrainReport:
    auc: float
    feature_importance: list
    n_train: int
    n_test: int
    n_rounds: int
    accuracy: float
    test_positives: int

    def to_dict(self) -> dict:
        return asdict(self)


def stratified_split(y, test_ratio: float, rng: np.random.Generator):
    """Row indices (train, test) with ``test_ratio`` of each class in the test part."""
    y = np.asarray(y)
    test = []
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(test_ratio * len(idx)))
        k = min(max(k, 1), len(idx) - 1) if len(idx) > 1 else 0
        test.append(idx[:k])
    test = np.sort(np.concatenate(test))
    train = np.setdiff1d(np.arange(len(y)), test)
    return train, test


def train(data, labels=None, split_ratio: float = 0.3, params: GBDTParams | None = None,
          rng: np.random.Generator | None = None):
    """Fit on a stratified ``1 - split_ratio`` share and report test AUC.

    ``split_ratio`` is the test share: 0.3 gives a 3:7 test:train split.
    """
    X, y = _as_xy(data, labels)
    if not 0.0 < split_ratio < 1.0:
        raise ValueError("split_ratio must lie in (0, 1)")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        only = "positive" if n_pos else "negative"
        raise TrainingError(f"training data holds only the {only} class ({len(y)} rows)")
    params = params or GBDTParams()
    rng = rng if rng is not None else np.random.default_rng(0)
    tr, te = stratified_split(y, split_ratio, rng)
    model = fit_gbdt(X[tr], y[tr], params)
    p = model.predict_proba(X[te])
    yt = y[te]
    score = auc(p, yt) if 0 < yt.sum() < len(yt) else float("nan")
    report = TrainReport(score, [float(v) for v in model.importance], len(tr), len(te),
                         len(model.trees), float(np.mean((p >= 0.5) == (yt == 1))), int(yt.sum()))
    return model, report


class ContinuousLearner:
    """Accumulating store plus the current model.

    ``retrain`` refits from scratch on the whole store with the same split
    and seed as :func:`train`; ``warm_start`` appends ``warm_rounds`` trees
    fitted on the whole store from the current margin.
    """

    def __init__(self, params: GBDTParams | None = None, policy: str = "retrain",
                 split_ratio: float = 0.3, seed: int = 0, warm_rounds: int = 20):
        if policy not in ("retrain", "warm_start"):
            raise ValueError(f"unknown update policy {policy!r}")
        self.params = params or GBDTParams()
        self.policy = policy
        self.split_ratio = split_ratio
        self.seed = seed
        self.warm_rounds = warm_rounds
        self.X = np.zeros((0, len(FEATURES)))
        self.y = np.zeros(0)
        self.model: TreeEnsemble | None = None
        self.report: TrainReport | None = None

    def update(self, data, labels=None) -> TreeEnsemble | None:
        X, y = _as_xy(data, labels)
        if len(y) == 0:
            raise ValueError("update needs new data")
        self.X = np.vstack((self.X, X))
        self.y = np.concatenate((self.y, y))
        if not 0 < self.y.sum() < len(self.y):
            return self.model  # not trainable yet
        if self.policy == "retrain" or self.model is None:
            self.model, self.report = train(self.X, self.y, self.split_ratio, self.params,
                                            np.random.default_rng(self.seed))
        else:
            self.model = fit_gbdt(self.X, self.y, self.params, init=self.model, n_rounds=self.warm_rounds)
        return self.model


def continuous_update(model: TreeEnsemble | None, new_data, store: ContinuousLearner | None = None,
                      policy: str = "retrain", params: GBDTParams | None = None, seed: int = 0,
                      labels=None) -> TreeEnsemble:
    """Functional wrapper over :class:`ContinuousLearner`."""
    if store is None:
        store = ContinuousLearner(params, policy, seed=seed)
    store.model = model
    return store.update(new_data, labels)


def superspreader_score(graph, node: int, states, weights) -> float:
    """Sum over layers k of (infected people at layer k) * w_k."""
    w = np.asarray(weights, dtype=np.float64)
    if len(w) < 1:
        raise ValueError("need at least one layer weight")
    inf, _ = neighborhood_counts(graph, node, states, len(w))
    return float(np.dot(inf, w))
