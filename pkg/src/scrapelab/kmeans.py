"""Seeded k-means (k-means++ seeding, Lloyd iterations)."""

from __future__ import annotations

import numpy as np
from numba import njit


def _sq_dists(points, centroids):
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    closest = _sq_dists(points, centroids[:1])[:, 0]
    for i in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            # fewer distinct points than k: duplicate centroids stay empty
            idx = 0
        centroids[i] = points[idx]
        closest = np.minimum(closest, _sq_dists(points, centroids[i:i + 1])[:, 0])
    return centroids


def objective(points, centroids, assignments) -> float:
    diff = points - centroids[assignments]
    return float(np.sum(diff * diff))


@njit(cache=True)
def _assign(pts, centroids, out):
    n, d = pts.shape
    k = centroids.shape[0]
    for i in range(n):
        best = np.inf
        arg = 0
        for j in range(k):
            s = 0.0
            for a in range(d):
                t = pts[i, a] - centroids[j, a]
                s += t * t
            if s < best:
                best = s
                arg = j
        out[i] = arg


@njit(cache=True)
def _lloyd(pts, centroids, assign, max_iter, trace):
    """Lloyd iterations in place; ``trace`` receives objectives, returns how many."""
    n, d = pts.shape
    k = centroids.shape[0]
    new = np.empty_like(assign)
    sums = np.zeros((k, d))
    counts = np.zeros(k, dtype=np.int64)
    used = 0
    for _ in range(max_iter):
        sums[:] = 0.0
        counts[:] = 0
        for i in range(n):
            counts[assign[i]] += 1
            for a in range(d):
                sums[assign[i], a] += pts[i, a]
        for j in range(k):
            if counts[j] > 0:
                for a in range(d):
                    centroids[j, a] = sums[j, a] / counts[j]
        _assign(pts, centroids, new)
        obj = 0.0
        for i in range(n):
            for a in range(d):
                t = pts[i, a] - centroids[new[i], a]
                obj += t * t
        trace[used] = obj
        used += 1
        same = True
        for i in range(n):
            if new[i] != assign[i]:
                same = False
                break
        if same:
            break
        assign[:] = new
    return used


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100, history: list | None = None):
    """Cluster ``points`` (n x d) into ``k`` groups.

    Ties in the nearest-centroid assignment go to the lowest centroid index.
    A centroid that loses all its points keeps its previous position.
    If ``history`` is given, the objective after every assignment step is
    appended to it.

    Returns ``(centroids, assignments)``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if k < 1:
        raise ValueError("k must be positive")
    if len(pts) < k:
        raise ValueError(f"need at least k={k} points, got {len(pts)}")
    rng = np.random.default_rng(seed)
    centroids = kmeans_pp_init(pts, k, rng)
    assign = np.empty(len(pts), dtype=np.int64)
    _assign(pts, centroids, assign)
    if history is not None:
        history.append(objective(pts, centroids, assign))
    trace = np.empty(max(max_iter, 1))
    used = _lloyd(np.ascontiguousarray(pts), centroids, assign, max_iter, trace)
    if history is not None:
        history.extend(float(v) for v in trace[:used])
    return centroids, assign
