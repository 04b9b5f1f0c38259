"""Gradient-boosted regression trees, squared loss, second-order leaf weights.

Each round fits an axis-aligned tree to the current residuals.  Split
gain is ``0.5*(GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam)) - gamma``
with unit hessians; leaf values are ``sum(residual)/(count + lam)`` and
predictions accumulate ``base_score + rate * sum(tree outputs)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kernels import split_scan


@dataclass
class GbtParams:
    n_rounds: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    min_leaf: int = 1
    reg_lambda: float = 1.0
    reg_gamma: float = 0.0

    def validate(self):
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        if not (0 < self.learning_rate <= 1):
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.reg_lambda < 0 or self.reg_gamma < 0:
            raise ValueError("regularization must be non-negative")


@dataclass
class Tree:
    feature: list = field(default_factory=list)  # -1 marks a leaf
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)

    def add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        out = np.empty(n)
        feature = self.feature
        threshold = self.threshold
        left = self.left
        right = self.right
        value = self.value
        for i in range(n):
            node = 0
            while feature[node] >= 0:
                if X[i, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i] = value[node]
        return out

    def split_count(self, n_features: int) -> np.ndarray:
        counts = np.zeros(n_features, dtype=np.int64)
        for f in self.feature:
            if f >= 0:
                counts[f] += 1
        return counts


@dataclass
class BoostedEnsemble:
    params: GbtParams
    base_score: float
    trees: list = field(default_factory=list)
    n_features: int = 0
    train_mse: list = field(default_factory=list)
    feature_names: Optional[list] = None

    def to_json(self, path=None) -> str:
        payload = {
            "params": self.params.__dict__,
            "base_score": self.base_score,
            "n_features": self.n_features,
            "feature_names": self.feature_names,
            "train_mse": self.train_mse,
            "trees": [t.__dict__ for t in self.trees],
        }
        text = json.dumps(payload, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, text: str) -> "BoostedEnsemble":
        d = json.loads(text)
        ens = cls(
            params=GbtParams(**d["params"]),
            base_score=d["base_score"],
            n_features=d["n_features"],
            train_mse=d["train_mse"],
            feature_names=d.get("feature_names"),
        )
        ens.trees = [Tree(**t) for t in d["trees"]]
        return ens


def _grow_tree(X, residual, params: GbtParams) -> Tree:
    tree = Tree()
    n, p = X.shape

    def build(index, depth) -> int:
        node = tree.add_node()
        g_sum = float(residual[index].sum())
        h_sum = float(index.shape[0])
        if depth >= params.max_depth or index.shape[0] < 2 * params.min_leaf:
            tree.value[node] = g_sum / (h_sum + params.reg_lambda)
            return node
        best_gain = 0.0
        best_feat = -1
        best_pos = -1
        best_order = None
        for f in range(p):
            order = np.argsort(X[index, f])
            xs = X[index[order], f]
            gs = residual[index[order]]
            gain, pos = split_scan(
                xs, gs, params.reg_lambda, params.reg_gamma, float(params.min_leaf)
            )
            if pos >= 0 and gain > best_gain:
                best_gain = gain
                best_feat = f
                best_pos = pos
                best_order = order
        if best_feat < 0:
            tree.value[node] = g_sum / (h_sum + params.reg_lambda)
            return node
        sorted_idx = index[best_order]
        xs = X[sorted_idx, best_feat]
        thr = 0.5 * (xs[best_pos] + xs[best_pos + 1])
        left_idx = sorted_idx[: best_pos + 1]
        right_idx = sorted_idx[best_pos + 1 :]
        tree.feature[node] = best_feat
        tree.threshold[node] = float(thr)
        tree.left[node] = build(left_idx, depth + 1)
        tree.right[node] = build(right_idx, depth + 1)
        return node

    build(np.arange(n), 0)
    return tree


def fit_gbt(X, y, params: Optional[GbtParams] = None, feature_names=None) -> BoostedEnsemble:
    """Boost trees against squared error; training MSE is tracked per round."""
    if params is None:
        params = GbtParams()
    params.validate()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape

    base = float(y.mean())
    ens = BoostedEnsemble(
        params=params, base_score=base, n_features=p, feature_names=feature_names
    )
    residual = y - base
    if np.ptp(y) == 0.0:
        return ens
    for _ in range(params.n_rounds):
        tree = _grow_tree(X, residual, params)
        step = params.learning_rate * tree.predict(X)
        residual = residual - step
        ens.trees.append(tree)
        ens.train_mse.append(float((residual**2).mean()))
    return ens


def predict(ensemble: BoostedEnsemble, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    out = np.full(X.shape[0], ensemble.base_score)
    for tree in ensemble.trees:
        out += ensemble.params.learning_rate * tree.predict(X)
    return out


def gbt_importance(ensemble: BoostedEnsemble) -> np.ndarray:
    """Split counts per feature across the ensemble (the "weight" metric)."""
    counts = np.zeros(ensemble.n_features, dtype=np.int64)
    for tree in ensemble.trees:
        counts += tree.split_count(ensemble.n_features)
    return counts
