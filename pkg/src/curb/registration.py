"""Point-to-point ICP with closed-form SVD alignment.

Correspondences come from the nearest-neighbor kernel; each iteration
solves the rigid alignment of the current inlier pairs (Kabsch) and applies
it incrementally until both the translation and rotation updates fall below
tolerance. The fitness score is the mean squared distance of inlier
correspondences (inlier radius 1.0 m by default).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import Pose
from .errors import RegistrationError


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    translation_tol: float = 1e-4
    rotation_tol: float = 1e-4
    inlier_radius: float = 1.0
    max_points: int = 1200  # deterministic stride subsample above this


def _stride_subsample(xyz: np.ndarray, cap: int) -> np.ndarray:
    n = xyz.shape[0]
    if n <= cap:
        return xyz
    idx = np.linspace(0, n - 1, cap).astype(np.int64)
    return xyz[idx]


def _kabsch(src: np.ndarray, dst: np.ndarray):
    """Least-squares rigid transform mapping src onto dst."""
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, s, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    diag = np.array([1.0, 1.0, d])
    r = vt.T @ np.diag(diag) @ u.T
    t = cd - r @ cs
    return r, t, s


def _rot_angle(r: np.ndarray) -> float:
    c = (np.trace(r) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def icp_register(source: np.ndarray, target: np.ndarray, initial: Pose,
                 params: IcpParams = IcpParams()) -> tuple[Pose, float]:
    """Estimate the pose mapping source-frame points into the target frame.

    Returns (pose, fitness). Raises RegistrationError when the overlap is
    degenerate (fewer than 3 non-collinear correspondences).
    """
    source = np.ascontiguousarray(source, dtype=np.float64).reshape(-1, 3)
    target = np.ascontiguousarray(target, dtype=np.float64).reshape(-1, 3)
    if len(source) == 0 or len(target) == 0:
        raise RegistrationError("empty cloud")
    src = _stride_subsample(source, params.max_points)
    tgt = _stride_subsample(target, params.max_points)

    r = initial.rotation_matrix()
    t = initial.t.copy()
    inlier_sq = params.inlier_radius ** 2

    moved = src @ r.T + t
    for _ in range(params.max_iterations):
        idx, sq = kernels.nearest_neighbors(moved, tgt)
        inl = sq <= inlier_sq
        if int(inl.sum()) >= 3:
            pairs_src = moved[inl]
            pairs_dst = tgt[idx[inl]]
        else:
            pairs_src = moved
            pairs_dst = tgt[idx]
        if len(pairs_src) < 3:
            raise RegistrationError("fewer than 3 correspondences")
        dr, dt, sing = _kabsch(pairs_src, pairs_dst)
        if sing[1] < 1e-9 * max(sing[0], 1.0):
            raise RegistrationError("collinear correspondence geometry")
        r = dr @ r
        t = dr @ t + dt
        moved = src @ r.T + t
        if np.linalg.norm(dt) < params.translation_tol and \
                _rot_angle(dr) < params.rotation_tol:
            break

    idx, sq = kernels.nearest_neighbors(moved, tgt)
    inl = sq <= inlier_sq
    fitness = float(sq[inl].mean()) if inl.any() else float(sq.mean())
    # re-orthonormalize through the quaternion constructor
    qw = np.sqrt(max(0.0, 1.0 + np.trace(r))) / 2.0
    if qw > 1e-6:
        q = np.array([qw,
                      (r[2, 1] - r[1, 2]) / (4 * qw),
                      (r[0, 2] - r[2, 0]) / (4 * qw),
                      (r[1, 0] - r[0, 1]) / (4 * qw)])
    else:
        # fall back for 180-degree rotations
        k = int(np.argmax(np.diag(r)))
        i, j = (k + 1) % 3, (k + 2) % 3
        s = np.sqrt(max(1e-12, 1.0 + r[k, k] - r[i, i] - r[j, j])) * 2.0
        q = np.zeros(4)
        q[0] = (r[j, i] - r[i, j]) / s
        q[1 + k] = s / 4.0
        q[1 + i] = (r[i, k] + r[k, i]) / s
        q[1 + j] = (r[j, k] + r[k, j]) / s
    return Pose(t, q), fitness
