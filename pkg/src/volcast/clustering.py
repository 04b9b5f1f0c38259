"""Stock grouping pipeline: correlation matrix -> PCA embedding -> K-means++.

The correlation is computed over a trailing window (by default 10 days of
26 bins per stock) either on volumes or on standardized feature columns.
PCA runs on the correlation matrix itself; the number of retained
components is the smallest count whose cumulative explained variance
ratio reaches the threshold, and eigenvectors are scaled by sqrt(eigenvalue).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .kernels import assign_nearest


class ClusterError(ValueError):
    pass


@dataclass
class ClusterModel:
    basis: str
    window: tuple  # (days, bins)
    correlation: np.ndarray
    evr_threshold: float
    n_components: int
    embedding: np.ndarray
    k: int
    assignments: dict  # stock -> cluster id
    seed: int
    evr: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def members(self, cluster_id: int) -> list:
        return [s for s, c in self.assignments.items() if c == cluster_id]

    def to_json(self, path=None) -> str:
        payload = {
            "basis": self.basis,
            "window": list(self.window),
            "evr_threshold": self.evr_threshold,
            "n_components": self.n_components,
            "k": self.k,
            "assignments": self.assignments,
            "seed": self.seed,
            "evr": self.evr.tolist(),
        }
        text = json.dumps(payload, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def correlation_matrix(
    panel: pd.DataFrame,
    stocks: list,
    basis: str = "volume",
    feature_columns: Optional[list] = None,
) -> np.ndarray:
    """Pearson correlations between stocks over aligned panel rows.

    ``basis='volume'`` correlates the volume series; ``basis='features'``
    correlates the per-stock concatenation of standardized feature columns.
    """
    if basis not in ("volume", "features"):
        raise ClusterError(f"unknown correlation basis {basis!r}")
    series = []
    length = None
    for stock in stocks:
        sub = panel[panel["stock"] == stock].sort_values(["day", "bin_index"])
        if basis == "volume":
            vec = sub["volume"].to_numpy(np.float64)
        else:
            if not feature_columns:
                raise ClusterError("feature basis requires feature_columns")
            cols = []
            for c in feature_columns:
                v = sub[c].to_numpy(np.float64)
                sd = v.std()
                cols.append((v - v.mean()) / sd if sd > 0 else np.zeros_like(v))
            vec = np.concatenate(cols)
        if length is None:
            length = vec.shape[0]
        elif vec.shape[0] != length:
            raise ClusterError(f"stock {stock} window length mismatch")
        if vec.std() == 0:
            raise ClusterError(f"constant series for stock {stock}")
        series.append(vec)
    mat = np.corrcoef(np.vstack(series))
    mat = (mat + mat.T) / 2.0
    np.fill_diagonal(mat, 1.0)
    return mat


def pca_embed(correlation: np.ndarray, evr_threshold: float):
    """Eigen-embedding of the correlation matrix with EVR truncation."""
    if not (0.0 < evr_threshold <= 1.0):
        raise ClusterError("evr_threshold must lie in (0, 1]")
    corr = np.asarray(correlation, dtype=np.float64)
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise ClusterError("correlation matrix must be square")
    if np.abs(corr - corr.T).max() > 1e-8:
        raise ClusterError("correlation matrix must be symmetric")
    vals, vecs = np.linalg.eigh(corr)
    if vals.min() < -1e-8 * max(1.0, vals.max()):
        raise ClusterError("correlation matrix is not PSD within tolerance")
    vals = np.clip(vals, 0.0, None)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    total = vals.sum()
    if total <= 0:
        raise ClusterError("degenerate correlation matrix")
    evr = vals / total
    cumsum = np.cumsum(evr)
    m = int(np.searchsorted(cumsum, evr_threshold - 1e-12) + 1)
    m = min(m, corr.shape[0])
    embedding = vecs[:, :m] * np.sqrt(vals[:m])[None, :]
    return embedding, evr


def _dsq_seed(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    first = int(rng.integers(n))
    centers[0] = X[first]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[c] = X[idx]
        d2 = np.minimum(d2, ((X - centers[c]) ** 2).sum(axis=1))
    return centers


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int = 300):
    labels = None
    history = []
    for _ in range(max_iter):
        new_labels, wcss = assign_nearest(X, centers)
        history.append(wcss)
        if labels is not None and np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
        k = centers.shape[0]
        counts = np.bincount(labels, minlength=k)
        for c in range(k):
            if counts[c] > 0:
                centers[c] = X[labels == c].mean(axis=0)
        empties = np.where(counts == 0)[0]
        if empties.size:
            # re-seed each empty centroid at the point farthest from its center
            dist = ((X - centers[labels]) ** 2).sum(axis=1)
            for c in empties:
                far = int(np.argmax(dist))
                centers[c] = X[far]
                dist[far] = -1.0
    return labels, centers, history


def kmeanspp(
    embedding: np.ndarray,
    k: int,
    seed: int,
    restarts: int = 10,
    return_details: bool = False,
):
    """Best-of-restarts K-means++ with Lloyd refinement.

    Deterministic given the seed; restart ties on WCSS resolve to the
    lowest restart index.
    """
    X = np.ascontiguousarray(embedding, dtype=np.float64)
    n = X.shape[0]
    if k > n:
        raise ClusterError(f"k={k} exceeds the number of points {n}")
    if restarts < 1:
        raise ClusterError("restarts must be >= 1")
    best = None
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(r,)))
        centers = _dsq_seed(X, k, rng)
        labels, centers, history = _lloyd(X, centers.copy())
        wcss = history[-1]
        if best is None or wcss < best[0]:
            best = (wcss, labels, centers, history, r)
    wcss, labels, centers, history, _ = best
    if return_details:
        return labels, {"wcss": wcss, "history": history, "centers": centers}
    return labels


def build_cluster_model(
    panel: pd.DataFrame,
    stocks: list,
    k: int = 3,
    evr_threshold: float = 0.80,
    basis: str = "volume",
    seed: int = 0,
    window: tuple = (10, 26),
    feature_columns: Optional[list] = None,
    restarts: int = 10,
) -> ClusterModel:
    """End-to-end grouping on the trailing window of a panel slice."""
    corr = correlation_matrix(panel, stocks, basis=basis, feature_columns=feature_columns)
    embedding, evr = pca_embed(corr, evr_threshold)
    labels = kmeanspp(embedding, k, seed, restarts=restarts)
    return ClusterModel(
        basis=basis,
        window=window,
        correlation=corr,
        evr_threshold=evr_threshold,
        n_components=embedding.shape[1],
        embedding=embedding,
        k=k,
        assignments={s: int(c) for s, c in zip(stocks, labels)},
        seed=seed,
        evr=evr,
    )
