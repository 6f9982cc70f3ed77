"""k-means and X-means (BIC-scored splitting) over trajectory embeddings."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAX_LLOYD_ITERS = 200
VARIANCE_FLOOR = 1e-12


@dataclass
class ClusterSet:
    labels: np.ndarray  # labels[i] is the cluster of point/trajectory i
    centroids: np.ndarray  # (n_c, d)
    inertia_history: list[float] | None = None

    @property
    def n_clusters(self) -> int:
        return len(self.centroids)

    def members(self, cluster_id: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.labels == cluster_id)]

    def sizes(self) -> list[int]:
        return [int(x) for x in np.bincount(self.labels, minlength=self.n_clusters)]

    def inertia(self, points: np.ndarray) -> float:
        return float(((points - self.centroids[self.labels]) ** 2).sum())

    def is_partition(self, n_points: int) -> bool:
        return (
            len(self.labels) == n_points
            and self.n_clusters >= 1
            and bool(np.all((self.labels >= 0) & (self.labels < self.n_clusters)))
            and min(self.sizes()) > 0
        )


def _as_points(points) -> np.ndarray:
    X = np.asarray(points, dtype=float)
    if X.ndim != 2:
        raise ValueError("points must be a list of equal-dimension vectors")
    if not np.all(np.isfinite(X)):
        raise ValueError("points must be finite")
    return X


def _sq_dists(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=-1)


def _kmeans_pp(X, k, rng):
    n = len(X)
    centers = [X[int(rng.integers(n))]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _repair_empty(X, labels, C, k):
    # Give each empty cluster the point farthest from its current centroid,
    # taken only from clusters that can spare one.
    for j in range(k):
        counts = np.bincount(labels, minlength=k)
        if counts[j] > 0:
            continue
        err = ((X - C[labels]) ** 2).sum(axis=1)
        donors = counts[labels] > 1
        err = np.where(donors, err, -1.0)
        idx = int(np.argmax(err))
        labels[idx] = j
        C[j] = X[idx]
    return labels


def lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int = MAX_LLOYD_ITERS) -> ClusterSet:
    """Lloyd iterations from given centers until the assignment stops changing."""
    C = np.array(centers, dtype=float)
    k = len(C)
    labels = np.argmin(_sq_dists(X, C), axis=1)
    labels = _repair_empty(X, labels, C, k)
    history = []
    for _ in range(max_iter):
        C = np.array([X[labels == j].mean(axis=0) for j in range(k)])
        history.append(float(((X - C[labels]) ** 2).sum()))
        new = np.argmin(_sq_dists(X, C), axis=1)
        new = _repair_empty(X, new, C, k)
        if np.array_equal(new, labels):
            break
        labels = new
    C = np.array([X[labels == j].mean(axis=0) for j in range(k)])
    return ClusterSet(labels.astype(np.int64), C, history)


def kmeans(points, k: int, seed: int = 0) -> ClusterSet:
    """k-means++ seeding followed by Lloyd iterations."""
    X = _as_points(points)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(X):
        raise ValueError(f"k={k} exceeds the number of points ({len(X)})")
    rng = np.random.default_rng(seed)
    return lloyd(X, _kmeans_pp(X, k, rng))


def bic_score(points, cs: ClusterSet) -> float:
    """Spherical-Gaussian BIC with one shared variance; higher is better.

    Free parameters: n_c * (d + 1) + 1.
    """
    X = _as_points(points)
    n, d = X.shape
    k = cs.n_clusters
    sse = float(((X - cs.centroids[cs.labels]) ** 2).sum())
    denom = (n - k) * d
    var = sse / denom if denom > 0 else 0.0
    var = max(var, VARIANCE_FLOOR)
    sizes = np.bincount(cs.labels, minlength=k)
    sizes = sizes[sizes > 0]
    loglik = (
        float((sizes * np.log(sizes / n)).sum())
        - 0.5 * n * d * math.log(2.0 * math.pi * var)
        - sse / (2.0 * var)
    )
    p = k * (d + 1) + 1
    return loglik - 0.5 * p * math.log(n)


def xmeans(points, k_min: int = 2, k_max: int = 16, seed: int = 0) -> ClusterSet:
    """X-means: grow from ``k_min`` clusters by BIC-approved 2-splits up to ``k_max``."""
    X = _as_points(points)
    n = len(X)
    if not 1 <= k_min <= k_max <= n:
        raise ValueError(f"need 1 <= k_min <= k_max <= n_points, got {k_min}, {k_max}, {n}")
    cs = kmeans(X, k_min, seed)
    rng = np.random.default_rng(seed)
    while cs.n_clusters < k_max:
        centers = []
        split_any = False
        budget = k_max - cs.n_clusters
        for j in range(cs.n_clusters):
            idx = np.flatnonzero(cs.labels == j)
            pts = X[idx]
            if budget > 0 and len(pts) >= 2:
                parent = ClusterSet(np.zeros(len(pts), dtype=np.int64), pts.mean(axis=0)[None])
                child = kmeans(pts, 2, int(rng.integers(2**31)))
                if bic_score(pts, child) > bic_score(pts, parent):
                    centers.extend(child.centroids)
                    split_any = True
                    budget -= 1
                    continue
            centers.append(cs.centroids[j])
        if not split_any:
            break
        cs = lloyd(X, np.array(centers))
    return cs


def write_clusters(cs: ClusterSet, path: str | Path, ids: list[int] | None = None) -> Path:
    """Write ``traj_id,cluster_id`` rows plus a ``<stem>_centroids.csv`` sidecar."""
    path = Path(path)
    ids = list(range(len(cs.labels))) if ids is None else ids
    lines = ["traj_id,cluster_id"] + [f"{i},{int(c)}" for i, c in zip(ids, cs.labels)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    sidecar = path.with_name(path.stem + "_centroids.csv")
    d = cs.centroids.shape[1]
    rows = ["cluster_id," + ",".join(f"f{j}" for j in range(d))]
    rows += [f"{j}," + ",".join(repr(float(x)) for x in c) for j, c in enumerate(cs.centroids)]
    sidecar.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return sidecar


def read_clusters(path: str | Path) -> ClusterSet:
    path = Path(path)
    rows = path.read_text(encoding="utf-8").splitlines()[1:]
    pairs = sorted((int(a), int(b)) for a, b in (r.split(",") for r in rows if r))
    labels = np.array([c for _, c in pairs], dtype=np.int64)
    sidecar = path.with_name(path.stem + "_centroids.csv")
    cent_rows = sidecar.read_text(encoding="utf-8").splitlines()[1:]
    centroids = np.array([[float(x) for x in r.split(",")[1:]] for r in cent_rows if r])
    return ClusterSet(labels, centroids)
