"""Sparse Gauss-Newton pose-graph optimization with Levenberg fallback.

The state is one SE(3) pose per node, perturbed as t + dt (global
translation) and R * Exp(dtheta) (local rotation). An edge (i, j) with
measurement Z contributes the residual

    r_t = R_i^T (t_j - t_i) - t_Z
    r_R = Log(R_Z^T R_i^T R_j)

scaled by sqrt(weight). Edges with from_id == -1 anchor a node to the world
frame (the implicit fixed identity node), which pins the gauge of each
connected component. Jacobians are analytic block expressions verified by
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve
from scipy.spatial.transform import Rotation

from .core import Pose, quat_normalize
from .errors import GaugeError

WORLD_ID = -1


@dataclass(frozen=True)
class PGOEdge:
    from_id: int  # -1 anchors to_id to the world frame
    to_id: int
    relative_pose: Pose
    weight: float = 1.0


@dataclass(frozen=True)
class OptimizationReport:
    initial_error: float
    final_error: float
    iterations: int

    def to_json(self):
        return {"initial_error": self.initial_error,
                "final_error": self.final_error,
                "iterations": self.iterations}


def _skew(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _jr_inv(phi: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of SO(3) Log, batched over rows of phi."""
    theta = np.linalg.norm(phi, axis=-1)
    k = np.empty_like(theta)
    small = theta < 1e-5
    k[small] = 1.0 / 12.0 + theta[small] ** 2 / 720.0
    t = theta[~small]
    k[~small] = 1.0 / t ** 2 - (1.0 + np.cos(t)) / (2.0 * t * np.sin(t))
    s = _skew(phi)
    eye = np.broadcast_to(np.eye(3), s.shape)
    return eye + 0.5 * s + k[..., None, None] * (s @ s)


class _Problem:
    def __init__(self, poses: dict[int, Pose], edges):
        self.ids = sorted(poses.keys())
        slot = {nid: k for k, nid in enumerate(self.ids)}
        self.t = np.stack([poses[i].t for i in self.ids])
        self.q = np.stack([poses[i].q for i in self.ids])
        self.ei_slots = np.array(
            [-1 if e.from_id == WORLD_ID else slot[e.from_id] for e in edges],
            dtype=np.int64)
        self.ej_slots = np.array([slot[e.to_id] for e in edges], dtype=np.int64)
        self.zt = np.stack([e.relative_pose.t for e in edges])
        self.zr = np.stack([e.relative_pose.rotation_matrix() for e in edges])
        self.sw = np.sqrt(np.array([e.weight for e in edges]))
        self._check_gauge(edges)

    def _check_gauge(self, edges):
        parent = {i: i for i in self.ids}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        anchored = set()
        for e in edges:
            if e.from_id == WORLD_ID:
                anchored.add(e.to_id)
            else:
                ra, rb = find(e.from_id), find(e.to_id)
                if ra != rb:
                    parent[ra] = rb
        roots_with_anchor = {find(a) for a in anchored}
        for i in self.ids:
            if find(i) not in roots_with_anchor:
                raise GaugeError(f"component of node {i} has no anchor edge")

    def _gather(self, t, rmats):
        fixed = self.ei_slots < 0
        ti = np.where(fixed[:, None], 0.0, t[np.maximum(self.ei_slots, 0)])
        ri = np.where(fixed[:, None, None], np.eye(3),
                      rmats[np.maximum(self.ei_slots, 0)])
        tj = t[self.ej_slots]
        rj = rmats[self.ej_slots]
        return ti, ri, tj, rj

    def residuals(self, t, q):
        rmats = Rotation.from_quat(q[:, [1, 2, 3, 0]]).as_matrix()
        ti, ri, tj, rj = self._gather(t, rmats)
        a = np.einsum("eji,ej->ei", ri, tj - ti)
        rt = a - self.zt
        rerr = np.einsum("eai,eba,ebl->eil", self.zr, ri, rj)
        rr = Rotation.from_matrix(rerr).as_rotvec()
        res = np.concatenate([rt, rr], axis=1) * self.sw[:, None]
        return res.reshape(-1), a, rr, ri

    def error(self, t, q) -> float:
        res, _, _, _ = self.residuals(t, q)
        return float(res @ res)

    def jacobian(self, t, q):
        res, a, rr, ri = self.residuals(t, q)
        ne = len(self.ej_slots)
        jr = _jr_inv(rr)
        jl = np.swapaxes(_jr_inv(rr), -1, -2)  # Jl^-1 = (Jr^-1)^T
        rit = np.swapaxes(ri, -1, -2)
        blocks = {
            ("t", "ti"): -rit,
            ("t", "ri"): _skew(a),
            ("t", "tj"): rit,
            ("r", "ri"): -jl @ np.swapaxes(self.zr, -1, -2),
            ("r", "rj"): jr,
        }
        rows, cols, vals = [], [], []
        base = np.arange(ne) * 6
        for (rkind, target), block in blocks.items():
            row0 = base + (0 if rkind == "t" else 3)
            if target in ("ti", "ri"):
                slots = self.ei_slots
            else:
                slots = self.ej_slots
            col0 = slots * 6 + (0 if target in ("ti", "tj") else 3)
            valid = slots >= 0
            if not valid.any():
                continue
            b = block[valid] * self.sw[valid, None, None]
            r0 = row0[valid]
            c0 = col0[valid]
            rr_idx = (r0[:, None, None] + np.arange(3)[None, :, None])
            cc_idx = (c0[:, None, None] + np.arange(3)[None, None, :])
            rows.append(np.broadcast_to(rr_idx, b.shape).reshape(-1))
            cols.append(np.broadcast_to(cc_idx, b.shape).reshape(-1))
            vals.append(b.reshape(-1))
        j = sp.coo_matrix(
            (np.concatenate(vals),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(6 * ne, 6 * len(self.ids))).tocsr()
        return j, res

    def apply(self, t, q, delta):
        d = delta.reshape(-1, 6)
        t2 = t + d[:, :3]
        rot = Rotation.from_quat(q[:, [1, 2, 3, 0]]) * Rotation.from_rotvec(d[:, 3:])
        qx = rot.as_quat()
        q2 = np.column_stack([qx[:, 3], qx[:, 0], qx[:, 1], qx[:, 2]])
        return t2, q2


def gauss_newton_step(poses: dict[int, Pose], edges, damping: float = 0.0):
    """One damped Gauss-Newton step; returns (new_poses, error_before)."""
    prob = _Problem(poses, edges)
    j, res = prob.jacobian(prob.t, prob.q)
    h = (j.T @ j).tocsc()
    if damping > 0:
        h = h + damping * sp.identity(h.shape[0], format="csc")
    delta = spsolve(h, -(j.T @ res))
    t2, q2 = prob.apply(prob.t, prob.q, delta)
    out = {nid: Pose(t2[k], quat_normalize(q2[k]))
           for k, nid in enumerate(prob.ids)}
    return out, float(res @ res)


def optimize_pose_graph(poses: dict[int, Pose], edges,
                        max_iterations: int = 20,
                        rel_tol: float = 1e-6):
    """Minimize the weighted edge error; error never increases.

    Returns (optimized poses, OptimizationReport). Raises GaugeError when a
    connected component has no anchor edge.
    """
    prob = _Problem(poses, edges)
    t, q = prob.t, prob.q
    err = prob.error(t, q)
    initial = err
    iterations = 0
    lam = 0.0
    for _ in range(max_iterations):
        if err <= 1e-30:
            break
        j, res = prob.jacobian(t, q)
        h0 = (j.T @ j).tocsc()
        g = j.T @ res
        accepted = False
        for _ in range(12):
            h = h0
            if lam > 0:
                h = h0 + lam * sp.identity(h0.shape[0], format="csc")
            try:
                delta = spsolve(h, -g)
            except Exception:
                lam = max(lam * 10.0, 1e-6)
                continue
            if not np.all(np.isfinite(delta)):
                lam = max(lam * 10.0, 1e-6)
                continue
            t2, q2 = prob.apply(t, q, delta)
            err2 = prob.error(t2, q2)
            if err2 < err:
                t, q = t2, q2
                accepted = True
                lam = lam / 3.0 if lam > 1e-9 else 0.0
                break
            lam = max(lam * 10.0, 1e-6)
        if not accepted:
            break
        iterations += 1
        if (err - err2) < rel_tol * max(err, 1e-12):
            err = err2
            break
        err = err2
    out = {nid: Pose(t[k], quat_normalize(q[k]))
           for k, nid in enumerate(prob.ids)}
    return out, OptimizationReport(initial, err, iterations)
