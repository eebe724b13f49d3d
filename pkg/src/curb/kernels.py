"""Hot numeric kernels: numba-jitted implementations with pure-numpy fallbacks.

The backend is chosen once at import time. Set the environment variable
``CURB_NUMBA=0`` to force the numpy path even when numba is installed; any
other value (or unset) uses numba when it imports cleanly.

Both paths implement identical semantics: squared distances are accumulated
as dx*dx + dy*dy + dz*dz, ties resolve to the lowest index, and voxel groups
are emitted in ascending order of their encoded key with member sums taken
in input order. Each path is deterministic; across paths results agree to
floating-point roundoff (exactly, for the integer outputs).

Public entry points: nearest_neighbors, voxel_group, zbuffer_select,
using_numba.
"""

from __future__ import annotations

import os

import numpy as np

# Voxel key packing: 21 bits per axis, biased. Supports |index| < 2^20
# per axis, i.e. worlds up to ~150 km at 0.15 m resolution.
_KEY_BITS = 21
_KEY_BIAS = 1 << 20
_KEY_SPAN = 1 << _KEY_BITS


def _want_numba() -> bool:
    flag = os.environ.get("CURB_NUMBA", "").strip().lower()
    if flag in ("0", "false", "off", "no"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _want_numba()


def using_numba() -> bool:
    """True when the jitted kernels are active."""
    return NUMBA_ENABLED


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _nn_numpy(query: np.ndarray, ref: np.ndarray, chunk: int = 256):
    n = query.shape[0]
    idx = np.empty(n, dtype=np.int64)
    sq = np.empty(n, dtype=np.float64)
    for s in range(0, n, chunk):
        e = min(s + chunk, n)
        dx = query[s:e, 0:1] - ref[None, :, 0]
        dy = query[s:e, 1:2] - ref[None, :, 1]
        dz = query[s:e, 2:3] - ref[None, :, 2]
        d = dx * dx + dy * dy + dz * dz
        best = np.argmin(d, axis=1)
        idx[s:e] = best
        sq[s:e] = d[np.arange(e - s), best]
    return idx, sq


def _encode_keys_numpy(xyz: np.ndarray, edge: float) -> np.ndarray:
    k = np.floor(xyz / edge).astype(np.int64) + _KEY_BIAS
    return (k[:, 0] * _KEY_SPAN + k[:, 1]) * _KEY_SPAN + k[:, 2]


def _voxel_group_numpy(xyz: np.ndarray, edge: float):
    keys = _encode_keys_numpy(xyz, edge)
    uniq, inv = np.unique(keys, return_inverse=True)
    sums = np.zeros((uniq.shape[0], 3), dtype=np.float64)
    counts = np.zeros(uniq.shape[0], dtype=np.int64)
    np.add.at(sums, inv, xyz)
    np.add.at(counts, inv, 1)
    centroids = sums / counts[:, None]
    return centroids, counts, uniq, inv.astype(np.int64)


def _zbuffer_numpy(pts: np.ndarray, n_az: int, n_el: int,
                   el_min: float, el_max: float,
                   r_min: float, r_max: float) -> np.ndarray:
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    r = np.sqrt(x * x + y * y + z * z)
    with np.errstate(invalid="ignore", divide="ignore"):
        el = np.arcsin(np.clip(z / np.maximum(r, 1e-300), -1.0, 1.0))
    valid = (r >= r_min) & (r <= r_max) & (el >= el_min) & (el < el_max)
    if not valid.any():
        return np.empty(0, dtype=np.int64)
    az = np.arctan2(y, x)  # [-pi, pi]
    ai = np.floor((az + np.pi) / (2.0 * np.pi) * n_az).astype(np.int64)
    ai[ai >= n_az] = n_az - 1
    ei = np.floor((el - el_min) / (el_max - el_min) * n_el).astype(np.int64)
    ei[ei >= n_el] = n_el - 1
    bins = ei * n_az + ai
    order = np.arange(pts.shape[0], dtype=np.int64)[valid]
    sub = np.lexsort((order, r[valid], bins[valid]))
    bsorted = bins[valid][sub]
    first = np.ones(bsorted.shape[0], dtype=bool)
    first[1:] = bsorted[1:] != bsorted[:-1]
    return order[sub[first]]


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:
    from numba import njit, prange

    @njit(cache=True, parallel=True)
    def _nn_numba(query, ref):
        n = query.shape[0]
        m = ref.shape[0]
        idx = np.empty(n, dtype=np.int64)
        sq = np.empty(n, dtype=np.float64)
        for i in prange(n):
            qx = query[i, 0]
            qy = query[i, 1]
            qz = query[i, 2]
            best = -1
            bestd = np.inf
            for j in range(m):
                dx = qx - ref[j, 0]
                dy = qy - ref[j, 1]
                dz = qz - ref[j, 2]
                d = dx * dx + dy * dy + dz * dz
                if d < bestd:
                    bestd = d
                    best = j
            idx[i] = best
            sq[i] = bestd
        return idx, sq

    @njit(cache=True)
    def _voxel_group_numba(xyz, edge):
        n = xyz.shape[0]
        keys = np.empty(n, dtype=np.int64)
        for i in range(n):
            kx = np.int64(np.floor(xyz[i, 0] / edge)) + _KEY_BIAS
            ky = np.int64(np.floor(xyz[i, 1] / edge)) + _KEY_BIAS
            kz = np.int64(np.floor(xyz[i, 2] / edge)) + _KEY_BIAS
            keys[i] = (kx * _KEY_SPAN + ky) * _KEY_SPAN + kz
        skeys = np.sort(keys)
        nuniq = 0
        for i in range(n):
            if i == 0 or skeys[i] != skeys[i - 1]:
                nuniq += 1
        uniq = np.empty(nuniq, dtype=np.int64)
        u = 0
        for i in range(n):
            if i == 0 or skeys[i] != skeys[i - 1]:
                uniq[u] = skeys[i]
                u += 1
        sums = np.zeros((nuniq, 3), dtype=np.float64)
        counts = np.zeros(nuniq, dtype=np.int64)
        inv = np.empty(n, dtype=np.int64)
        for i in range(n):
            slot = np.searchsorted(uniq, keys[i])
            inv[i] = slot
            sums[slot, 0] += xyz[i, 0]
            sums[slot, 1] += xyz[i, 1]
            sums[slot, 2] += xyz[i, 2]
            counts[slot] += 1
        centroids = np.empty((nuniq, 3), dtype=np.float64)
        for u in range(nuniq):
            centroids[u, 0] = sums[u, 0] / counts[u]
            centroids[u, 1] = sums[u, 1] / counts[u]
            centroids[u, 2] = sums[u, 2] / counts[u]
        return centroids, counts, uniq, inv

    @njit(cache=True)
    def _zbuffer_numba(pts, n_az, n_el, el_min, el_max, r_min, r_max):
        n = pts.shape[0]
        nbins = n_az * n_el
        best_r = np.full(nbins, np.inf)
        best_i = np.full(nbins, -1, dtype=np.int64)
        two_pi = 2.0 * np.pi
        el_span = el_max - el_min
        for i in range(n):
            x = pts[i, 0]
            y = pts[i, 1]
            z = pts[i, 2]
            r = np.sqrt(x * x + y * y + z * z)
            if r < r_min or r > r_max:
                continue
            s = z / max(r, 1e-300)
            if s > 1.0:
                s = 1.0
            elif s < -1.0:
                s = -1.0
            el = np.arcsin(s)
            if el < el_min or el >= el_max:
                continue
            az = np.arctan2(y, x)
            ai = np.int64(np.floor((az + np.pi) / two_pi * n_az))
            if ai >= n_az:
                ai = n_az - 1
            ei = np.int64(np.floor((el - el_min) / el_span * n_el))
            if ei >= n_el:
                ei = n_el - 1
            b = ei * n_az + ai
            if r < best_r[b]:
                best_r[b] = r
                best_i[b] = i
        count = 0
        for b in range(nbins):
            if best_i[b] >= 0:
                count += 1
        out = np.empty(count, dtype=np.int64)
        u = 0
        for b in range(nbins):
            if best_i[b] >= 0:
                out[u] = best_i[b]
                u += 1
        return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def nearest_neighbors(query: np.ndarray, ref: np.ndarray):
    """Index and squared distance of the nearest point in ``ref`` per query row.

    Both arrays must be contiguous (N, 3) / (M, 3) float64 with M >= 1.
    Ties resolve to the lowest reference index.
    """
    query = np.ascontiguousarray(query, dtype=np.float64)
    ref = np.ascontiguousarray(ref, dtype=np.float64)
    if ref.shape[0] == 0:
        raise ValueError("reference cloud is empty")
    if query.shape[0] == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    if NUMBA_ENABLED:
        return _nn_numba(query, ref)
    return _nn_numpy(query, ref)


def voxel_group(xyz: np.ndarray, edge: float):
    """Group points into cubic voxels of the given edge, anchored at the origin.

    Returns (centroids, counts, keys, inverse): one row per occupied voxel in
    ascending encoded-key order; ``inverse[i]`` is the group of input point i.
    Boundary points bucket toward negative infinity (floor division).
    """
    xyz = np.ascontiguousarray(xyz, dtype=np.float64)
    if xyz.shape[0] == 0:
        return (np.empty((0, 3)), np.empty(0, dtype=np.int64),
                np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    if NUMBA_ENABLED:
        return _voxel_group_numba(xyz, float(edge))
    return _voxel_group_numpy(xyz, float(edge))


def zbuffer_select(pts: np.ndarray, n_az: int, n_el: int,
                   el_min: float, el_max: float,
                   r_min: float, r_max: float) -> np.ndarray:
    """Nearest-return selection over an azimuth/elevation bin grid.

    ``pts`` are sensor-frame coordinates. Returns indices of the winning
    point per occupied bin, ordered by bin id. Points outside the range or
    elevation window are ignored; ties go to the lowest index.
    """
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    if pts.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    if NUMBA_ENABLED:
        return _zbuffer_numba(pts, n_az, n_el, el_min, el_max, r_min, r_max)
    return _zbuffer_numpy(pts, n_az, n_el, el_min, el_max, r_min, r_max)
