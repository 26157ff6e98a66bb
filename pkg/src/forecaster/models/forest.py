"""Random forest on the lagged-window design: from-scratch CART ensemble.

Trees split on variance reduction with sqrt-of-features subsampling per
split and bootstrap row sampling; one forest per (component, output step).
Everything is seeded, so fits are reproducible and independent of group
presentation order (the design matrix is built in sorted-group order).
"""

from __future__ import annotations

import math

import numpy as np

from ..series import SeriesBundle
from .base import (
    FitPlan,
    FittedModel,
    ModelSpec,
    matrix_from_json,
    matrix_to_json,
)
from .linear import WindowPredictor, _as_future, _group_tails, window_design


class Tree:
    """CART regression tree stored as parallel arrays (JSON-friendly)."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def _add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def predict_row(self, row: np.ndarray) -> float:
        node = 0
        while self.feature[node] >= 0:
            if row[self.feature[node]] <= self.threshold[node]:
                node = self.left[node]
            else:
                node = self.right[node]
        return self.value[node]

    def to_json(self) -> dict:
        return {"feature": self.feature, "threshold": self.threshold,
                "left": self.left, "right": self.right, "value": self.value}

    @classmethod
    def from_json(cls, obj: dict) -> "Tree":
        t = cls()
        t.feature = [int(v) for v in obj["feature"]]
        t.threshold = [float(v) for v in obj["threshold"]]
        t.left = [int(v) for v in obj["left"]]
        t.right = [int(v) for v in obj["right"]]
        t.value = [float(v) for v in obj["value"]]
        return t


def _best_split(x: np.ndarray, y: np.ndarray, features: np.ndarray,
                min_leaf: int) -> tuple[int, float] | None:
    """Variance-reduction split: minimize summed child SSE via prefix sums."""
    n = len(y)
    best = None
    best_cost = np.inf
    for feat in features:
        order = np.argsort(x[:, feat], kind="stable")
        xv = x[order, feat]
        yv = y[order]
        csum = np.cumsum(yv)
        csq = np.cumsum(yv ** 2)
        total_sum = csum[-1]
        total_sq = csq[-1]
        for i in range(min_leaf - 1, n - min_leaf):
            if xv[i] == xv[i + 1]:
                continue
            nl = i + 1
            nr = n - nl
            sl, ql = csum[i], csq[i]
            sr, qr = total_sum - sl, total_sq - ql
            cost = (ql - sl * sl / nl) + (qr - sr * sr / nr)
            if cost < best_cost - 1e-15:
                best_cost = cost
                best = (int(feat), float(0.5 * (xv[i] + xv[i + 1])))
    return best


def build_tree(x: np.ndarray, y: np.ndarray, rng: np.random.Generator,
               max_depth: int, min_leaf: int) -> Tree:
    tree = Tree()
    n_features = x.shape[1]
    n_sub = max(1, math.isqrt(n_features) + (0 if math.isqrt(n_features) ** 2
                                             == n_features else 1))

    def grow(idx: np.ndarray, depth: int) -> int:
        node = tree._add_node()
        yv = y[idx]
        tree.value[node] = float(yv.mean())
        if depth >= max_depth or len(idx) < 2 * min_leaf or np.all(yv == yv[0]):
            return node
        features = rng.choice(n_features, size=min(n_sub, n_features),
                              replace=False)
        split = _best_split(x[idx], yv, features, min_leaf)
        if split is None:
            return node
        feat, threshold = split
        mask = x[idx, feat] <= threshold
        tree.feature[node] = feat
        tree.threshold[node] = threshold
        tree.left[node] = grow(idx[mask], depth + 1)
        tree.right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(len(y)), 0)
    return tree


class Forest:
    def __init__(self, trees: list[Tree]):
        self.trees = trees

    def predict_row(self, row: np.ndarray) -> float:
        return sum(t.predict_row(row) for t in self.trees) / len(self.trees)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.array([self.predict_row(r) for r in x])


def fit_forest(x: np.ndarray, y: np.ndarray, n_trees: int, max_depth: int,
               min_leaf: int, rng: np.random.Generator) -> Forest:
    trees = []
    n = len(y)
    for _ in range(n_trees):
        boot = rng.integers(0, n, size=n)
        trees.append(build_tree(x[boot], y[boot], rng, max_depth, min_leaf))
    return Forest(trees)


class RandomForestModel(FittedModel):
    KIND = "random_forest"

    def __init__(self, spec, group_keys, component_names, forests, l_in, l_out,
                 n_future, tails, sigma):
        super().__init__(spec, group_keys, component_names)
        self.forests = forests  # [l_out][C] -> Forest
        self.l_in = l_in
        self.l_out = l_out
        self.n_future = n_future
        self.tails = tails
        self.sigma = sigma

    def _apply(self, row: np.ndarray, _win: np.ndarray) -> np.ndarray:
        c = len(self.component_names)
        out = np.empty((self.l_out, c))
        for step in range(self.l_out):
            for ci in range(c):
                out[step, ci] = self.forests[step][ci].predict_row(row)
        return out

    def predictor(self, group_key, future_cov=None) -> WindowPredictor:
        target_win, past_win, static = self.tails[group_key]
        fut = _as_future(future_cov, self.n_future)
        return WindowPredictor(self._apply, target_win, past_win, fut, static,
                               self.l_out)

    def residual_sigma(self, group_key) -> np.ndarray:
        return self.sigma

    def payload(self) -> dict:
        return {
            "l_in": self.l_in, "l_out": self.l_out, "n_future": self.n_future,
            "group_keys": self.group_keys,
            "component_names": self.component_names,
            "sigma": matrix_to_json(self.sigma),
            "forests": [[[t.to_json() for t in f.trees] for f in step]
                        for step in self.forests],
            "tails": {g: {"target": matrix_to_json(t), "past": matrix_to_json(p),
                          "static": matrix_to_json(s)}
                      for g, (t, p, s) in self.tails.items()},
        }

    @classmethod
    def from_payload(cls, spec, payload) -> "RandomForestModel":
        forests = [[Forest([Tree.from_json(t) for t in f]) for f in step]
                   for step in payload["forests"]]
        tails = {
            g: (matrix_from_json(v["target"]), matrix_from_json(v["past"]),
                matrix_from_json(v["static"]))
            for g, v in payload["tails"].items()
        }
        return cls(spec, payload["group_keys"], payload["component_names"],
                   forests, payload["l_in"], payload["l_out"],
                   payload["n_future"], tails, matrix_from_json(payload["sigma"]))


def fit_random_forest(bundle: SeriesBundle, spec: ModelSpec, seed: int = 0,
                      plan: FitPlan | None = None) -> RandomForestModel:
    l_in = int(spec.params.get("input_chunk", 1))
    l_out = int(spec.params.get("output_chunk", 1))
    n_trees = int(spec.params.get("n_trees", 100))
    max_depth = int(spec.params.get("max_depth", 8))
    min_leaf = int(spec.params.get("min_leaf", 2))
    use_past = plan.use_past if plan else bool(bundle.past_cov_names)
    use_future = plan.use_future if plan else bool(bundle.future_cov_names)
    use_static = plan.use_static if plan else bool(bundle.static_cov_names)

    x, y = window_design(bundle, l_in, l_out, use_past, use_future, use_static)
    c = len(bundle.component_names)
    rng = np.random.default_rng(seed)
    forests = []
    resid = np.empty_like(y)
    for step in range(l_out):
        row_forests = []
        for ci in range(c):
            col = step * c + ci
            forest = fit_forest(x, y[:, col], n_trees, max_depth, min_leaf, rng)
            resid[:, col] = forest.predict(x) - y[:, col]
            row_forests.append(forest)
        forests.append(row_forests)
    sigma = resid.reshape(-1, l_out, c).std(axis=(0, 1))

    tails = {g.group_key: _group_tails(g, l_in, use_past, use_static)
             for g in bundle.groups}
    n_future = len(bundle.future_cov_names) if use_future else 0
    return RandomForestModel(spec, bundle.group_keys, bundle.component_names,
                             forests, l_in, l_out, n_future, tails, sigma)
