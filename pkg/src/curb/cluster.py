"""Deterministic density clustering (DBSCAN).

Hand-rolled instead of sklearn so the label assignment order is fully
pinned: clusters are numbered by the lowest-index core point that seeds
them, and border points join the first cluster that reaches them in BFS
order. Neighborhoods come from a cKDTree and use closed balls (<= eps).
"""

from __future__ import annotations

from collections import deque

import numpy as np
from scipy.spatial import cKDTree

NOISE = -1


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Label each row of ``points``; -1 marks noise.

    min_pts counts the point itself, matching the classic definition.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    tree = cKDTree(pts)
    neighborhoods = tree.query_ball_point(pts, eps, workers=1)
    core = np.array([len(nb) >= min_pts for nb in neighborhoods])
    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        queue = deque([i])
        visited[i] = True
        labels[i] = cluster
        while queue:
            j = queue.popleft()
            for k in sorted(neighborhoods[j]):
                if labels[k] == NOISE:
                    labels[k] = cluster
                if core[k] and not visited[k]:
                    visited[k] = True
                    queue.append(k)
        cluster += 1
    return labels


def cluster_centroids(points: np.ndarray, labels: np.ndarray) -> list[np.ndarray]:
    """Mean position per cluster, ordered by cluster label."""
    pts = np.asarray(points, dtype=np.float64)
    out = []
    for c in range(labels.max() + 1 if len(labels) else 0):
        mask = labels == c
        if mask.any():
            out.append(pts[mask].mean(axis=0))
    return out
