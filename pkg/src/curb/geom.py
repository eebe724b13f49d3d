"""Small 2D geometry helpers: hulls, segment tests, polyline resampling."""

from __future__ import annotations

import numpy as np


def wrap_angle(a: float) -> float:
    """Wrap into (-pi, pi]."""
    a = (a + np.pi) % (2.0 * np.pi) - np.pi
    if a == -np.pi:
        a = np.pi
    return float(a)


def angle_diff(a: float, b: float) -> float:
    """Smallest absolute difference between two angles."""
    return abs(wrap_angle(a - b))


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull, CCW. Handles n < 3 and collinear input."""
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) == 0:  # fully collinear
        return np.array([pts[0], pts[-1]])
    return hull


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-18:
        return float(np.linalg.norm(p - a))
    s = float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + s * ab)))


def point_in_convex(p: np.ndarray, hull: np.ndarray) -> bool:
    """Containment in a CCW convex polygon (boundary counts as inside)."""
    n = len(hull)
    if n == 0:
        return False
    if n == 1:
        return bool(np.allclose(p, hull[0]))
    if n == 2:
        return point_segment_distance(p, hull[0], hull[1]) < 1e-9
    for i in range(n):
        a, b = hull[i], hull[(i + 1) % n]
        if (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) < -1e-9:
            return False
    return True


def hull_distance(p: np.ndarray, hull: np.ndarray) -> float:
    """Distance from a point to a convex hull; 0 inside."""
    p = np.asarray(p, dtype=np.float64)[:2]
    n = len(hull)
    if n == 0:
        return np.inf
    if n == 1:
        return float(np.linalg.norm(p - hull[0]))
    if point_in_convex(p, hull):
        return 0.0
    return min(point_segment_distance(p, hull[i], hull[(i + 1) % n])
               for i in range(n))


def expanded_ring(points: np.ndarray, margin: float, arc_steps: int = 4) -> np.ndarray:
    """Outline of the hull buffered by ``margin`` (arc-approximated corners).

    Matches the membership rule hull_distance(p) <= margin closely enough
    for export; degenerate hulls (points, segments) expand to capsules.
    """
    hull = convex_hull(points)
    if len(hull) == 0:
        return np.empty((0, 2))
    if len(hull) == 1:
        ang = np.linspace(0.0, 2.0 * np.pi, 4 * arc_steps, endpoint=False)
        return hull[0] + margin * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if len(hull) == 2:
        a, b = hull
        d = b - a
        t = np.arctan2(d[1], d[0])
        ring = []
        for base, start in ((b, t - np.pi / 2), (a, t + np.pi / 2)):
            for k in range(2 * arc_steps + 1):
                ang = start + np.pi * k / (2 * arc_steps)
                ring.append(base + margin * np.array([np.cos(ang), np.sin(ang)]))
        return np.array(ring)
    ring = []
    n = len(hull)
    for i in range(n):
        prev_dir = hull[i] - hull[(i - 1) % n]
        next_dir = hull[(i + 1) % n] - hull[i]
        a0 = np.arctan2(prev_dir[1], prev_dir[0]) - np.pi / 2
        a1 = np.arctan2(next_dir[1], next_dir[0]) - np.pi / 2
        sweep = (a1 - a0) % (2.0 * np.pi)
        for k in range(arc_steps + 1):
            ang = a0 + sweep * k / arc_steps
            ring.append(hull[i] + margin * np.array([np.cos(ang), np.sin(ang)]))
    return np.array(ring)


def segments_properly_intersect(p1, p2, p3, p4, eps: float = 1e-12) -> bool:
    """True when the open segments cross at a single interior point."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    p3 = np.asarray(p3, dtype=np.float64)
    p4 = np.asarray(p4, dtype=np.float64)
    d1 = p2 - p1
    d2 = p4 - p3
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(denom) < eps:
        return False
    r = p3 - p1
    t = (r[0] * d2[1] - r[1] * d2[0]) / denom
    u = (r[0] * d1[1] - r[1] * d1[0]) / denom
    return eps < t < 1.0 - eps and eps < u < 1.0 - eps


def polyline_length(pts: np.ndarray) -> float:
    pts = np.asarray(pts, dtype=np.float64)
    if len(pts) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def resample_polyline(pts: np.ndarray, spacing: float) -> np.ndarray:
    """Evenly spaced samples along a polyline, endpoints included.

    The actual spacing is the total length divided by round(length/spacing),
    so it stays within [0.5, 2] x spacing for any length >= spacing / 2.
    """
    pts = np.asarray(pts, dtype=np.float64)
    if len(pts) == 0:
        return pts.reshape(0, pts.shape[-1] if pts.ndim > 1 else 2)
    if len(pts) == 1:
        return pts.copy()
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total < 1e-12:
        return pts[:1].copy()
    n = max(1, int(round(total / spacing)))
    targets = np.linspace(0.0, total, n + 1)
    out = np.empty((n + 1, pts.shape[1]))
    j = 0
    for i, s in enumerate(targets):
        while j < len(seg) - 1 and cum[j + 1] < s:
            j += 1
        denom = max(seg[j], 1e-12)
        f = (s - cum[j]) / denom
        out[i] = pts[j] + f * (pts[j + 1] - pts[j])
    return out


def interp_along(pts: np.ndarray, s: float) -> tuple[np.ndarray, float]:
    """Point and tangent heading at arc length ``s`` along a 2D polyline."""
    pts = np.asarray(pts, dtype=np.float64)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = float(np.clip(s, 0.0, cum[-1]))
    j = int(np.searchsorted(cum[1:], s, side="left"))
    j = min(j, len(seg) - 1)
    denom = max(seg[j], 1e-12)
    f = (s - cum[j]) / denom
    p = pts[j] + f * (pts[j + 1] - pts[j])
    d = pts[j + 1] - pts[j]
    return p, float(np.arctan2(d[1], d[0]))
