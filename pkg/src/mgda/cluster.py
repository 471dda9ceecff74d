"""k-means (k-means++ seeding, Lloyd iterations) over goal-space points."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .data import ConfigError


@dataclass(eq=False)
class ClusterIndex:
    centroids: np.ndarray  # (C, d)
    labels: np.ndarray  # (N,) cluster id per indexed point, in dataset flat order
    eps_k: np.ndarray  # (C,) max pairwise distance inside each cluster
    n_iter: int = 0

    @property
    def C(self) -> int:
        return len(self.centroids)

    def assign(self, points) -> np.ndarray:
        """Nearest centroid; ties go to the lowest cluster id."""
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        d2 = _sq_dists(np.atleast_2d(p), self.centroids)
        out = np.argmin(d2, axis=1)
        return int(out[0]) if single else out

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(dict(
            centroids=self.centroids.tolist(), labels=self.labels.tolist(),
            eps_k=self.eps_k.tolist(), n_iter=self.n_iter)))

    @classmethod
    def load(cls, path) -> "ClusterIndex":
        d = json.loads(Path(path).read_text())
        return cls(np.array(d["centroids"], float), np.array(d["labels"], np.int64),
                   np.array(d["eps_k"], float), d["n_iter"])


def _sq_dists(x, c):
    out = np.empty((len(x), len(c)))
    for start in range(0, len(x), 8192):
        diff = x[start:start + 8192, None, :] - c[None, :, :]
        out[start:start + 8192] = np.einsum("ncd,ncd->nc", diff, diff)
    return out


def _objective(x, centroids, labels) -> float:
    diff = x - centroids[labels]
    return float(np.sum(diff * diff))


def _kmeanspp(x, C, rng):
    centroids = [x[rng.integers(len(x))]]
    d2 = ((x - centroids[0]) ** 2).sum(1)
    for _ in range(1, C):
        total = d2.sum()
        k = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
        k = min(k, len(x) - 1)
        while d2[k] == 0:  # float round-off at the boundary
            k = (k + 1) % len(x)
        centroids.append(x[k])
        d2 = np.minimum(d2, ((x - x[k]) ** 2).sum(1))
    return np.array(centroids, dtype=float)


def max_pairwise_distance(points) -> float:
    p = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(p) < 2:
        return 0.0
    if len(p) > 256 and p.shape[1] == 2:
        try:
            p = p[ConvexHull(p).vertices]
        except QhullError:  # collinear: the extremes along each axis suffice
            p = p[np.unique(np.concatenate([p.argmin(0), p.argmax(0)]))]
    return float(np.sqrt(_sq_dists(p, p).max()))


def kmeans_fit(points, C: int, max_iters: int = 100, seed: int = 0) -> ClusterIndex:
    x = np.asarray(points, dtype=float)
    n_distinct = len(np.unique(x, axis=0))
    if C < 1 or C > n_distinct:
        raise ConfigError(f"C={C} must be between 1 and the number of distinct points ({n_distinct})")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(x, C, rng)
    labels = np.argmin(_sq_dists(x, centroids), axis=1)
    obj = _objective(x, centroids, labels)
    it = 0
    for it in range(1, max_iters + 1):
        new = centroids.copy()
        counts = np.bincount(labels, minlength=C)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        after_update = _objective(x, new, labels)
        new_labels = np.argmin(_sq_dists(x, new), axis=1)
        after_assign = _objective(x, new, new_labels)
        tol = 1e-9 * max(obj, 1.0)
        assert after_update <= obj + tol and after_assign <= after_update + tol, "Lloyd objective increased"
        centroids, obj = new, after_assign
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    eps_k = np.array([max_pairwise_distance(x[labels == k]) for k in range(C)])
    return ClusterIndex(centroids, labels, eps_k, it)


def cluster_dataset(ds, C: int, max_iters: int = 100, seed: int = 0) -> ClusterIndex:
    """Cluster phi(s) for every state in the dataset (flat order)."""
    return kmeans_fit(ds.flat()["goals"], C, max_iters, seed)


def default_clusters(maze_name: str, n_free: int) -> int:
    table = {"umaze": 20, "medium": 40, "large": 80}
    return table.get(maze_name, max(1, min(20, 2 * n_free)))
