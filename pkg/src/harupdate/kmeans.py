"""Lloyd's k-means with k-means++ seeding and silhouette-based choice of k."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1


def sq_distances(X: np.ndarray, C: np.ndarray, chunk: int = 2048) -> np.ndarray:
    out = np.empty((len(X), len(C)))
    for s in range(0, len(X), chunk):
        diff = X[s:s + chunk, None, :] - C[None, :, :]
        out[s:s + chunk] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


@dataclass
class KMeansModel:
    centroids: np.ndarray
    inertia: float
    seed: int = 0
    history: list[float] = field(default_factory=list)
    n_iter: int = 0

    @property
    def k(self) -> int:
        return len(self.centroids)

    def predict(self, X) -> np.ndarray:
        """Nearest centroid by squared Euclidean distance; ties go to the lowest index."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if len(X) == 0:
            return np.zeros(0, dtype=np.int64)
        return sq_distances(X, self.centroids).argmin(axis=1)

    def to_json(self) -> str:
        return json.dumps({"schema_version": SCHEMA_VERSION, "kind": "kmeans", "seed": self.seed,
                           "inertia": self.inertia, "n_iter": self.n_iter, "history": self.history,
                           "centroids": self.centroids.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "KMeansModel":
        raw = json.loads(text)
        if raw.get("schema_version") != SCHEMA_VERSION or raw.get("kind") != "kmeans":
            raise ValueError("not a k-means model document")
        return cls(np.array(raw["centroids"], dtype=np.float64), raw["inertia"], raw["seed"],
                   raw["history"], raw["n_iter"])


def kmeans_plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = sq_distances(X, X[chosen[-1]][None])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(rest))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, sq_distances(X, X[idx][None])[:, 0])
    return X[chosen].copy()


def fit_kmeans(vectors, k: int, seed: int = 0, max_iter: int = 300, init=None) -> KMeansModel:
    """Cluster ``vectors`` into ``k`` groups.

    The objective is recorded after every assignment step and never increases.
    A cluster that loses all its points is re-seeded at the point farthest
    from its current centroid. ``init`` supplies starting centroids instead of
    k-means++ seeding, which keeps cluster indices aligned with a previous fit.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if k < 2:
        raise ValueError("k must be at least 2")
    if len(X) < k:
        raise ValueError(f"need at least k={k} vectors, got {len(X)}")
    if len(np.unique(X, axis=0)) < k:
        raise ValueError("fewer distinct vectors than clusters")
    rng = np.random.default_rng(seed)
    if init is not None:
        C = np.array(init, dtype=np.float64)
        if C.shape != (k, X.shape[1]):
            raise ValueError("init centroids have the wrong shape")
    else:
        C = kmeans_plus_plus(X, k, rng)
    labels = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = sq_distances(X, C)
        new = d2.argmin(axis=1)
        point_d2 = d2[np.arange(len(X)), new]
        history.append(float(point_d2.sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        taken = set()
        for j in range(k):
            members = labels == j
            if members.any():
                C[j] = X[members].mean(axis=0)
                continue
            for idx in np.argsort(-point_d2, kind="stable"):
                if int(idx) not in taken:
                    taken.add(int(idx))
                    C[j] = X[idx]
                    point_d2[idx] = 0.0
                    break
    else:
        history.append(float(sq_distances(X, C).min(axis=1).sum()))
    return KMeansModel(C, history[-1], seed, history, it)


def silhouette(X: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette coefficient; points in singleton clusters score 0."""
    D = np.sqrt(np.maximum(sq_distances(X, X), 0.0))
    uniq = np.unique(labels)
    if len(uniq) < 2:
        return 0.0
    scores = np.zeros(len(X))
    means = np.stack([D[:, labels == c].sum(axis=1) for c in uniq], axis=1)
    counts = np.array([(labels == c).sum() for c in uniq])
    pos = np.searchsorted(uniq, labels)
    for i in range(len(X)):
        own = pos[i]
        if counts[own] == 1:
            continue
        a = means[i, own] / (counts[own] - 1)
        others = np.delete(means[i] / counts, own)
        b = others.min()
        scores[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(scores.mean())


def select_k(vectors, ks=range(8, 41), seed: int = 0, sample: int = 2000) -> tuple[int, dict[int, float]]:
    """Pick k with the highest silhouette on a seeded subsample."""
    X = np.asarray(vectors, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if len(X) > sample:
        X = X[np.sort(rng.choice(len(X), sample, replace=False))]
    n_distinct = len(np.unique(X, axis=0))
    scores = {}
    for k in ks:
        if k > n_distinct - 1:
            break
        model = fit_kmeans(X, k, seed)
        scores[k] = silhouette(X, model.predict(X))
    if not scores:
        raise ValueError("no candidate k fits the data")
    best = max(scores, key=lambda k: (scores[k], -k))
    return best, scores
