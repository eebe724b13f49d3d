"""Directed lane graph: construction from tracks, aggregation, smoothing,
pose-graph refinement propagation, and partitioning into intersections and
roads.

Tracks come from two sources: ego keyframe paths and centroid observations
of surrounding vehicles. Observation tracks are filtered (stationary
segments, heading jumps, density outliers) and evenly resampled before
being converted into directed chains and merged into the growing graph
under a yaw gate, so opposite-direction lanes never collapse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cluster import dbscan
from .core import Pose
from .geom import (angle_diff, convex_hull, expanded_ring, hull_distance,
                   resample_polyline, segments_properly_intersect, wrap_angle)


@dataclass(frozen=True)
class TrackPoint:
    """One sample of a driven or observed path. z is carried but ignored
    for graphing."""

    position: np.ndarray  # (3,)
    yaw: float
    timestamp: float
    source: str  # "ego" | "observed"
    instance_id: int


@dataclass(frozen=True)
class LaneGraphParams:
    sample_spacing: float = 2.0
    merge_radius: float = 1.5
    yaw_threshold: float = np.radians(30.0)
    smooth_lambda: float = 0.5
    smooth_iterations: int = 3
    stationary_window: int = 10
    stationary_dist: float = 0.5
    heading_jump: float = np.radians(45.0)
    dbscan_eps: float = 2.0
    dbscan_min_pts: int = 3
    time_scale: float = 0.5  # meters per simulation step in the DBSCAN embedding
    gap_split: float = 15.0  # timestamp gap that starts a new sub-track


@dataclass(frozen=True)
class PartitionParams:
    cluster_radius: float = 12.0
    area_margin: float = 8.0
    member_pad: float = 2.0


class LaneGraph:
    """Directed graph of lane nodes with per-node aggregated yaw and visit
    counts. No self-loops, no duplicate edges; insertion orders are stable
    so serialization is deterministic."""

    def __init__(self):
        self.nodes: dict[int, np.ndarray] = {}
        self.yaw: dict[int, float] = {}
        self.visits: dict[int, int] = {}
        self.edges: dict[tuple[int, int], None] = {}
        self.succ: dict[int, list[int]] = {}
        self.pred: dict[int, list[int]] = {}
        self._next_id = 0

    def __len__(self):
        return len(self.nodes)

    def n_edges(self):
        return len(self.edges)

    def add_node(self, pos, yaw: float, visits: int = 1) -> int:
        nid = self._next_id
        self._next_id += 1
        self.nodes[nid] = np.asarray(pos, dtype=np.float64).reshape(2).copy()
        self.yaw[nid] = wrap_angle(float(yaw))
        self.visits[nid] = visits
        self.succ[nid] = []
        self.pred[nid] = []
        return nid

    def add_edge(self, u: int, v: int) -> bool:
        if u == v or (u, v) in self.edges:
            return False
        if u not in self.nodes or v not in self.nodes:
            raise KeyError(f"edge references unknown node {u}->{v}")
        self.edges[(u, v)] = None
        self.succ[u].append(v)
        self.pred[v].append(u)
        return True

    def degree(self, nid: int) -> int:
        return len(self.succ[nid]) + len(self.pred[nid])

    def out_degree(self, nid: int) -> int:
        return len(self.succ[nid])

    def node_ids(self) -> list[int]:
        return list(self.nodes.keys())

    def positions_array(self):
        ids = list(self.nodes.keys())
        if not ids:
            return ids, np.empty((0, 2)), np.empty(0)
        pos = np.stack([self.nodes[i] for i in ids])
        yaw = np.array([self.yaw[i] for i in ids])
        return ids, pos, yaw

    def copy(self) -> "LaneGraph":
        g = LaneGraph()
        g.nodes = {k: v.copy() for k, v in self.nodes.items()}
        g.yaw = dict(self.yaw)
        g.visits = dict(self.visits)
        g.edges = dict(self.edges)
        g.succ = {k: list(v) for k, v in self.succ.items()}
        g.pred = {k: list(v) for k, v in self.pred.items()}
        g._next_id = self._next_id
        return g

    def to_json(self) -> dict:
        return {
            "nodes": [[int(i), float(p[0]), float(p[1]),
                       float(self.yaw[i]), int(self.visits[i])]
                      for i, p in self.nodes.items()],
            "edges": [[int(u), int(v)] for (u, v) in self.edges],
        }

    @staticmethod
    def from_json(data: dict) -> "LaneGraph":
        g = LaneGraph()
        for i, x, y, yaw, visits in data["nodes"]:
            i = int(i)
            g.nodes[i] = np.array([x, y], dtype=np.float64)
            g.yaw[i] = float(yaw)
            g.visits[i] = int(visits)
            g.succ[i] = []
            g.pred[i] = []
            g._next_id = max(g._next_id, i + 1)
        for u, v in data["edges"]:
            g.add_edge(int(u), int(v))
        return g


# ---------------------------------------------------------------------------
# observation filtering
# ---------------------------------------------------------------------------

def _group_tracks(tracks):
    groups: dict[tuple, list] = {}
    for t in tracks:
        groups.setdefault((t.source, t.instance_id), []).append(t)
    for key in groups:
        groups[key].sort(key=lambda t: t.timestamp)
    return groups


def _resample_track(points, spacing, source, instance_id):
    if len(points) < 2:
        return list(points)
    xy = np.stack([p.position[:2] for p in points])
    ts = np.array([p.timestamp for p in points], dtype=np.float64)
    seg = np.linalg.norm(np.diff(xy, axis=0), axis=1)
    if seg.sum() < spacing * 0.5:
        return []
    out_xy = resample_polyline(xy, spacing)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s_target = np.linspace(0.0, cum[-1], len(out_xy))
    out_ts = np.interp(s_target, cum, ts)
    out = []
    for i in range(len(out_xy)):
        if i < len(out_xy) - 1:
            d = out_xy[i + 1] - out_xy[i]
        else:
            d = out_xy[i] - out_xy[i - 1]
        yaw = float(np.arctan2(d[1], d[0]))
        out.append(TrackPoint(np.array([out_xy[i][0], out_xy[i][1], 0.0]),
                              yaw, float(out_ts[i]), source, instance_id))
    return out


def filter_observations(tracks, params: LaneGraphParams = LaneGraphParams(),
                        return_groups: bool = False):
    """Clean raw track points and resample them evenly.

    Per instance: drop stationary stretches (small displacement across the
    trailing and leading sample window), drop heading jumps, then density-
    cluster in (x, y, scaled time) and discard noise. Each surviving cluster
    is resampled at sample_spacing and returned as one sub-track.
    """
    groups = _group_tracks(tracks)
    out_groups = []
    for key in sorted(groups.keys()):
        pts = groups[key]
        n = len(pts)
        xy = np.stack([p.position[:2] for p in pts])
        w = params.stationary_window
        keep = np.ones(n, dtype=bool)
        for i in range(n):
            fwd = np.linalg.norm(xy[min(i + w, n - 1)] - xy[i])
            back = np.linalg.norm(xy[i] - xy[max(i - w, 0)])
            if fwd < params.stationary_dist and back < params.stationary_dist:
                keep[i] = False
        pts = [p for p, k in zip(pts, keep) if k]
        if not pts:
            continue
        survivors = [pts[0]]
        for p in pts[1:]:
            if angle_diff(p.yaw, survivors[-1].yaw) <= params.heading_jump:
                survivors.append(p)
        pts = survivors
        if len(pts) < 2:
            continue
        emb = np.stack([[p.position[0], p.position[1],
                         p.timestamp * params.time_scale] for p in pts])
        labels = dbscan(emb, params.dbscan_eps, params.dbscan_min_pts)
        for c in range(labels.max() + 1 if len(labels) else 0):
            cluster = [p for p, l in zip(pts, labels) if l == c]
            sub = _resample_track(cluster, params.sample_spacing,
                                  key[0], key[1])
            if len(sub) >= 2:
                out_groups.append(sub)
    if return_groups:
        return out_groups
    return [p for g in out_groups for p in g]


def split_on_gaps(track, gap: float):
    """Split a time-ordered track where consecutive timestamps jump by more
    than ``gap`` steps."""
    if not track:
        return []
    subs = [[track[0]]]
    for p in track[1:]:
        if p.timestamp - subs[-1][-1].timestamp > gap:
            subs.append([p])
        else:
            subs[-1].append(p)
    return subs


# ---------------------------------------------------------------------------
# chains and aggregation
# ---------------------------------------------------------------------------

def track_to_directed_chain(track) -> LaneGraph:
    """Polyline graph of a filtered, time-ordered track. Edge direction
    follows travel; node yaw comes from the local tangent."""
    g = LaneGraph()
    if len(track) < 2:
        return g
    xy = np.stack([p.position[:2] for p in track])
    ids = []
    for i in range(len(xy)):
        if i < len(xy) - 1:
            d = xy[i + 1] - xy[i]
        else:
            d = xy[i] - xy[i - 1]
        ids.append(g.add_node(xy[i], float(np.arctan2(d[1], d[0]))))
    for a, b in zip(ids[:-1], ids[1:]):
        g.add_edge(a, b)
    return g


def aggregate(graph: LaneGraph, chain: LaneGraph,
              params: LaneGraphParams = LaneGraphParams()) -> LaneGraph:
    """Merge a directed chain into the graph under the yaw gate.

    Candidate nodes are the graph nodes present at call entry: a chain node
    snaps to the nearest candidate within merge_radius whose aggregated yaw
    differs by less than yaw_threshold, moving it to the visit-weighted mean
    position; otherwise a new node is inserted. Mutates and returns graph.
    """
    ids0, pos0, yaw0 = graph.positions_array()
    cids, cpos, cyaw = chain.positions_array()
    mapping: dict[int, int] = {}
    if len(ids0) and len(cids):
        diff = cpos[:, None, :] - pos0[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=2))
        dyaw = np.abs(np.arctan2(np.sin(cyaw[:, None] - yaw0[None, :]),
                                 np.cos(cyaw[:, None] - yaw0[None, :])))
        bad = (dist > params.merge_radius) | (dyaw >= params.yaw_threshold)
        dist[bad] = np.inf
        best = np.argmin(dist, axis=1)
        best_ok = np.isfinite(dist[np.arange(len(cids)), best])
    else:
        best = np.zeros(len(cids), dtype=np.int64)
        best_ok = np.zeros(len(cids), dtype=bool)
    for k, cid in enumerate(cids):
        if best_ok[k]:
            gid = ids0[int(best[k])]
            v = graph.visits[gid]
            graph.nodes[gid] = (graph.nodes[gid] * v + cpos[k]) / (v + 1)
            sy = v * np.sin(graph.yaw[gid]) + np.sin(cyaw[k])
            cy = v * np.cos(graph.yaw[gid]) + np.cos(cyaw[k])
            graph.yaw[gid] = float(np.arctan2(sy, cy))
            graph.visits[gid] = v + 1
            mapping[cid] = gid
        else:
            mapping[cid] = graph.add_node(cpos[k], cyaw[k])
    for (u, v) in chain.edges:
        gu, gv = mapping[u], mapping[v]
        if gu != gv:
            graph.add_edge(gu, gv)
    return graph


def laplacian_smooth(graph: LaneGraph, iterations: int = 3,
                     lam: float = 0.5) -> LaneGraph:
    """Relax interior chain nodes toward their neighbor mean.

    Endpoints (degree 1) and junctions (in+out >= 3) stay fixed; topology,
    yaws, and visit counts are unchanged.
    """
    g = graph.copy()
    ids = g.node_ids()
    neighbor_ids = {}
    movable = []
    for i in ids:
        nb = sorted(set(g.succ[i]) | set(g.pred[i]))
        neighbor_ids[i] = nb
        if g.degree(i) == 2 and len(nb) >= 2:
            movable.append(i)
    for _ in range(iterations):
        current = {i: g.nodes[i] for i in ids}
        for i in movable:
            mean = np.mean([current[j] for j in neighbor_ids[i]], axis=0)
            g.nodes[i] = current[i] + lam * (mean - current[i])
    return g


def propagate_pgo_update(graph: LaneGraph, old_anchors: dict[int, Pose],
                         new_anchors: dict[int, Pose]) -> LaneGraph:
    """Apply the rigid correction of each lane node's nearest anchor
    keyframe. Topology preserved; positions and yaws move."""
    if not old_anchors or not graph.nodes:
        return graph.copy()
    keys = sorted(old_anchors.keys())
    apos = np.stack([old_anchors[k].t[:2] for k in keys])
    g = graph.copy()
    for i in g.node_ids():
        p = g.nodes[i]
        d = np.sum((apos - p) ** 2, axis=1)
        k = keys[int(np.argmin(d))]
        corr = new_anchors[k].compose(old_anchors[k].inverse())
        moved = corr.apply(np.array([p[0], p[1], 0.0]))
        g.nodes[i] = moved[:2]
        g.yaw[i] = wrap_angle(g.yaw[i] + corr.yaw())
    return g


# ---------------------------------------------------------------------------
# partitioning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Partition:
    partition_id: int
    kind: str  # "intersection" | "road"
    node_ids: tuple
    centroid: np.ndarray  # (2,)
    hull: np.ndarray      # (K, 2) member hull (unexpanded)
    margin: float

    def distance(self, xy) -> float:
        return hull_distance(np.asarray(xy, dtype=np.float64)[:2], self.hull)

    def contains(self, xy) -> bool:
        return self.distance(xy) <= self.margin

    def polygon_ring(self) -> np.ndarray:
        return expanded_ring(self.hull, self.margin)

    def to_json(self) -> dict:
        ring = self.polygon_ring()
        return {"id": int(self.partition_id), "kind": self.kind,
                "node_ids": [int(i) for i in self.node_ids],
                "centroid": [float(self.centroid[0]), float(self.centroid[1])],
                "polygon": [[float(x), float(y)] for x, y in ring],
                "margin": float(self.margin)}


def _crossing_marked(graph: LaneGraph) -> set:
    """Endpoints of geometrically crossing edge pairs (no shared node)."""
    edges = list(graph.edges.keys())
    if not edges:
        return set()
    seg = np.array([[*graph.nodes[u], *graph.nodes[v]] for u, v in edges])
    cell = 8.0
    buckets: dict[tuple, list] = {}
    for k, (x1, y1, x2, y2) in enumerate(seg):
        for cx in range(int(min(x1, x2) // cell), int(max(x1, x2) // cell) + 1):
            for cy in range(int(min(y1, y2) // cell),
                            int(max(y1, y2) // cell) + 1):
                buckets.setdefault((cx, cy), []).append(k)
    marked = set()
    tested = set()
    for members in buckets.values():
        for ai in range(len(members)):
            for bi in range(ai + 1, len(members)):
                a, b = members[ai], members[bi]
                if (a, b) in tested:
                    continue
                tested.add((a, b))
                ua, va = edges[a]
                ub, vb = edges[b]
                if len({ua, va, ub, vb}) < 4:
                    continue
                if segments_properly_intersect(seg[a, :2], seg[a, 2:],
                                               seg[b, :2], seg[b, 2:]):
                    marked.update((ua, va, ub, vb))
    return marked


def detect_intersections(graph: LaneGraph,
                         params: PartitionParams = PartitionParams(),
                         ) -> tuple[list[Partition], list[Partition]]:
    """Partition the lane graph into intersection and road areas.

    Marks high-degree nodes and endpoints of crossing edges, density-
    clusters the marks into intersections, and turns the remaining
    connected components into roads. Every node lands in exactly one
    partition; partitions are ordered by centroid so the result is
    insensitive to graph construction order.
    """
    ids = graph.node_ids()
    if not ids:
        return [], []
    marked = {i for i in ids if graph.degree(i) >= 3}
    marked |= _crossing_marked(graph)
    clusters: list[list[int]] = []
    if marked:
        mlist = sorted(marked)
        mpos = np.stack([graph.nodes[i] for i in mlist])
        labels = dbscan(mpos, params.cluster_radius, 1)
        for c in range(labels.max() + 1):
            clusters.append([mlist[k] for k in range(len(mlist))
                             if labels[k] == c])
    hulls = [convex_hull(np.stack([graph.nodes[i] for i in cl]))
             for cl in clusters]
    assigned: dict[int, int] = {}
    for ci, cl in enumerate(clusters):
        for i in cl:
            assigned[i] = ci
    for i in ids:
        if i in assigned:
            continue
        best, bestd = -1, np.inf
        for ci, h in enumerate(hulls):
            d = hull_distance(graph.nodes[i], h)
            if d <= params.member_pad and d < bestd:
                best, bestd = ci, d
        if best >= 0:
            assigned[i] = best
    intersections = []
    for ci, cl in enumerate(clusters):
        members = sorted([i for i in ids if assigned.get(i, -1) == ci])
        pos = np.stack([graph.nodes[i] for i in members])
        intersections.append((members, pos.mean(axis=0), convex_hull(pos)))
    # road components over the remaining nodes
    remaining = [i for i in ids if i not in assigned]
    rem = set(remaining)
    comp_of: dict[int, int] = {}
    comps: list[list[int]] = []
    for i in remaining:
        if i in comp_of:
            continue
        stack = [i]
        comp_of[i] = len(comps)
        comp = []
        while stack:
            u = stack.pop()
            comp.append(u)
            for w in graph.succ[u] + graph.pred[u]:
                if w in rem and w not in comp_of:
                    comp_of[w] = len(comps)
                    stack.append(w)
        comps.append(sorted(comp))
    roads = []
    for comp in comps:
        pos = np.stack([graph.nodes[i] for i in comp])
        roads.append((comp, pos.mean(axis=0), convex_hull(pos)))

    def sort_key(entry):
        c = entry[1]
        return (round(float(c[0]), 6), round(float(c[1]), 6))

    intersections.sort(key=sort_key)
    roads.sort(key=sort_key)
    out_i, out_r = [], []
    pid = 0
    for members, cent, hull in intersections:
        out_i.append(Partition(pid, "intersection", tuple(members), cent,
                               hull, params.area_margin))
        pid += 1
    for members, cent, hull in roads:
        out_r.append(Partition(pid, "road", tuple(members), cent, hull,
                               params.area_margin))
        pid += 1
    return out_i, out_r
