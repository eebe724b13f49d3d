"""Centralized mapping backend.

Keeps the global pose graph: agent registration pins each agent's first
node to a world anchor, subsequent keyframes chain on odometry edges, loop
closures come from radius-search + ICP with a fitness gate, and the graph
is optimized by sparse Gauss-Newton. After optimization, loop-closure edges
whose endpoints ended up within merge_distance are contracted: the older
node merges into the newer one, its edges are redirected (measurements
re-composed so residuals are preserved), map points already covered by the
surviving node's voxels are dropped, dynamic observations transfer, and the
removed node's driven path is kept as a passive observation.

Single consumer: one thread owns the PoseGraph and applies ingest, loop
search, optimize, and contract serially. Snapshots handed to readers are
plain JSON trees.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .core import Pose, SemanticPointCloud, Timestamp, transform_cloud
from .errors import ProtocolError
from .frontend import (DynamicObservation, KeyframePackage, VoxelPolicy,
                       registration_view, semantic_voxel_filter,
                       voxel_occupancy_keys)
from .optimize import PGOEdge, OptimizationReport, optimize_pose_graph
from .registration import IcpParams, icp_register
from .errors import RegistrationError

WORLD_ID = -1

EDGE_ODOMETRY = "odometry"
EDGE_LOOP = "loop_closure"
EDGE_ANCHOR = "anchor"


@dataclass(frozen=True)
class ServerParams:
    search_radius: float = 10.0
    fitness_threshold: float = 0.25   # mean squared inlier distance, m^2
    recency_guard: int = 5            # same-agent nodes excluded from search
    merge_distance: float = 1.0
    odometry_weight: float = 1.0
    loop_weight: float = 1.0
    anchor_weight: float = 1e6
    optimize_every: int = 5           # ingests per optimize/contract cycle
    max_gn_iterations: int = 20
    icp: IcpParams = IcpParams()


@dataclass
class GraphNode:
    node_id: int
    agent_id: int
    source_keyframe_ids: list
    pose: Pose
    cloud: SemanticPointCloud          # node frame, stuff only
    dynamic_observations: list
    creation_timestamp: Timestamp


@dataclass(frozen=True)
class GraphEdge:
    edge_id: int
    from_id: int   # WORLD_ID for anchor edges
    to_id: int
    relative_pose: Pose
    kind: str
    weight: float


@dataclass(frozen=True)
class PassiveObservation:
    """Driven path of a contracted node, kept for lane-graph construction."""

    agent_id: int
    path_points: tuple  # ((position (3,), timestamp), ...)
    keyframe_ids: tuple  # parallel bookkeeping for accounting


@dataclass(frozen=True)
class ContractionReport:
    nodes_removed: int
    passive_observations_created: int

    def to_json(self):
        return {"nodes_removed": self.nodes_removed,
                "passive_observations_created":
                    self.passive_observations_created}


class PoseGraph:
    """The server-side SLAM state (scene-graph layer F)."""

    def __init__(self, params: ServerParams = ServerParams(),
                 policy: VoxelPolicy | None = None):
        self.params = params
        self.policy = policy or VoxelPolicy.default()
        self.nodes: dict[int, GraphNode] = {}
        self.edges: list[GraphEdge] = []
        self.passive_observations: list[PassiveObservation] = []
        self.agent_latest: dict[int, int] = {}
        self.agent_last_kf: dict[int, int] = {}
        self.agent_recent: dict[int, list] = {}
        self.ingested = 0
        self._next_node = 0
        self._next_edge = 0

    # -- construction -------------------------------------------------------

    def _new_node(self, agent_id, kf_id, pose, cloud, obs, ts) -> GraphNode:
        node = GraphNode(self._next_node, agent_id, [kf_id], pose, cloud,
                         list(obs), ts)
        self._next_node += 1
        self.nodes[node.node_id] = node
        return node

    def _add_edge(self, from_id, to_id, rel, kind, weight) -> GraphEdge:
        if from_id == to_id:
            raise ProtocolError("self edges are not allowed")
        edge = GraphEdge(self._next_edge, from_id, to_id, rel, kind, weight)
        self._next_edge += 1
        self.edges.append(edge)
        return edge

    def register_agent(self, pkg: KeyframePackage, anchor_pose: Pose) -> int:
        """First keyframe of an agent: node at the supplied anchor pose plus
        a high-weight anchor edge pinning it to the world frame."""
        if pkg.agent_id in self.agent_latest:
            raise ProtocolError(f"agent {pkg.agent_id} already registered")
        if pkg.keyframe_id != 0:
            raise ProtocolError("registration must carry keyframe 0")
        node = self._new_node(pkg.agent_id, pkg.keyframe_id, anchor_pose,
                              pkg.static_cloud, pkg.dynamic_observations,
                              pkg.timestamp)
        self._add_edge(WORLD_ID, node.node_id, anchor_pose, EDGE_ANCHOR,
                       self.params.anchor_weight)
        self.agent_latest[pkg.agent_id] = node.node_id
        self.agent_last_kf[pkg.agent_id] = 0
        self.agent_recent[pkg.agent_id] = [node.node_id]
        self.ingested += 1
        return node.node_id

    def ingest_keyframe(self, pkg: KeyframePackage) -> int:
        if pkg.agent_id not in self.agent_latest:
            raise ProtocolError(f"agent {pkg.agent_id} not registered")
        expect = self.agent_last_kf[pkg.agent_id] + 1
        if pkg.keyframe_id != expect:
            raise ProtocolError(
                f"agent {pkg.agent_id}: expected keyframe {expect}, "
                f"got {pkg.keyframe_id}")
        prev = self.nodes[self.agent_latest[pkg.agent_id]]
        pose = prev.pose.compose(pkg.odometry_pose_delta)
        node = self._new_node(pkg.agent_id, pkg.keyframe_id, pose,
                              pkg.static_cloud, pkg.dynamic_observations,
                              pkg.timestamp)
        self._add_edge(prev.node_id, node.node_id, pkg.odometry_pose_delta,
                       EDGE_ODOMETRY, self.params.odometry_weight)
        self.agent_latest[pkg.agent_id] = node.node_id
        self.agent_last_kf[pkg.agent_id] = pkg.keyframe_id
        self.agent_recent[pkg.agent_id].append(node.node_id)
        self.ingested += 1
        return node.node_id

    # -- loop closures ------------------------------------------------------

    def find_loop_closures(self, new_node_id: int) -> list[GraphEdge]:
        """ICP every candidate within the search radius; add an edge when the
        fitness clears the threshold. Failed registrations are skipped."""
        node = self.nodes[new_node_id]
        p = self.params
        guard = set(self.agent_recent[node.agent_id][-(p.recency_guard + 1):])
        out = []
        for cand_id in sorted(self.nodes.keys()):
            if cand_id == new_node_id or cand_id in guard:
                continue
            cand = self.nodes[cand_id]
            if float(np.linalg.norm(cand.pose.t - node.pose.t)) > p.search_radius:
                continue
            src = registration_view(node.cloud)
            tgt = registration_view(cand.cloud)
            if len(src) == 0 or len(tgt) == 0:
                continue
            init = cand.pose.inverse().compose(node.pose)
            try:
                rel, fitness = icp_register(src.xyz, tgt.xyz, init, p.icp)
            except RegistrationError:
                continue
            if fitness < p.fitness_threshold:
                out.append(self._add_edge(cand_id, new_node_id, rel,
                                          EDGE_LOOP, p.loop_weight))
        return out

    # -- optimization -------------------------------------------------------

    def optimize(self, max_iterations: int | None = None) -> OptimizationReport:
        poses = {nid: n.pose for nid, n in self.nodes.items()}
        pgo_edges = [PGOEdge(e.from_id, e.to_id, e.relative_pose, e.weight)
                     for e in self.edges]
        new_poses, report = optimize_pose_graph(
            poses, pgo_edges,
            max_iterations=max_iterations or self.params.max_gn_iterations)
        for nid, pose in new_poses.items():
            self.nodes[nid].pose = pose
        return report

    # -- contraction --------------------------------------------------------

    def _merge_nodes(self, old: GraphNode, new: GraphNode):
        from .kernels import voxel_group
        d = new.pose.inverse().compose(old.pose)  # new_T_old
        moved = transform_cloud(d, old.cloud, frame="keyframe")
        occupied = voxel_occupancy_keys(new.cloud, self.policy)
        if len(moved):
            keep = np.ones(len(moved), dtype=bool)
            for cls in np.unique(moved.classes):
                cls_mask = moved.classes == cls
                edge = self.policy.edge_for(int(cls))
                for inst in np.unique(moved.instance_ids[cls_mask]):
                    mask = cls_mask & (moved.instance_ids == inst)
                    _, _, keys, inv = voxel_group(moved.xyz[mask], edge)
                    covered = np.array(
                        [(int(cls), int(inst), int(k)) in occupied
                         for k in keys])
                    keep[np.nonzero(mask)[0][covered[inv]]] = False
            new.cloud = SemanticPointCloud.concat(
                [new.cloud, moved.select(keep)], frame="keyframe")
        for obs in old.dynamic_observations:
            new.dynamic_observations.append(DynamicObservation(
                obs.instance_id, d.apply(obs.centroid_rel), obs.timestamp,
                new.source_keyframe_ids[0]))
        new.source_keyframe_ids.extend(old.source_keyframe_ids)
        self.passive_observations.append(PassiveObservation(
            old.agent_id, ((old.pose.t.copy(), old.creation_timestamp),),
            (old.source_keyframe_ids[0],)))
        # redirect edges, re-composing measurements so residuals at the
        # current estimate are unchanged
        rewritten = []
        seen = set()
        for e in self.edges:
            f, t, rel = e.from_id, e.to_id, e.relative_pose
            if f == old.node_id:
                f, rel = new.node_id, d.compose(rel)
            if t == old.node_id:
                t, rel = new.node_id, rel.compose(d.inverse())
            if f == t:
                continue
            key = (f, t, e.kind)
            if key in seen:
                continue
            seen.add(key)
            rewritten.append(GraphEdge(e.edge_id, f, t, rel, e.kind, e.weight))
        self.edges = rewritten
        del self.nodes[old.node_id]

    def contract_edges(self) -> ContractionReport:
        """Merge the older endpoint of every converged loop-closure edge into
        the newer one. Call after optimize."""
        removed = 0
        frontier = set(self.agent_latest.values())
        merged_into: dict[int, int] = {}

        def resolve(i):
            while i in merged_into:
                i = merged_into[i]
            return i

        for e in [e for e in self.edges if e.kind == EDGE_LOOP]:
            a, b = resolve(e.from_id), resolve(e.to_id)
            if a == b or a not in self.nodes or b not in self.nodes:
                continue
            na, nb = self.nodes[a], self.nodes[b]
            if float(np.linalg.norm(na.pose.t - nb.pose.t)) \
                    >= self.params.merge_distance:
                continue
            old, new = (na, nb) if (na.creation_timestamp, na.node_id) < \
                (nb.creation_timestamp, nb.node_id) else (nb, na)
            if old.node_id in frontier:
                continue
            self._merge_nodes(old, new)
            merged_into[old.node_id] = new.node_id
            removed += 1
        return ContractionReport(removed, removed)

    # -- outputs -------------------------------------------------------------

    def assemble_global_map(self, policy: VoxelPolicy | None = None
                            ) -> SemanticPointCloud:
        policy = policy or self.policy
        clouds = [transform_cloud(n.pose, n.cloud, frame="world")
                  for _, n in sorted(self.nodes.items())]
        merged = SemanticPointCloud.concat(clouds, frame="world")
        if len(merged) == 0:
            return merged
        return semantic_voxel_filter(merged, policy)

    def snapshot_json(self) -> dict:
        from .io import q9
        nodes = []
        for nid in sorted(self.nodes.keys()):
            n = self.nodes[nid]
            nodes.append({"id": nid, "agent": n.agent_id,
                          "pose": {"t": [q9(v) for v in n.pose.t],
                                   "q": [q9(v) for v in n.pose.q]},
                          "keyframes": list(n.source_keyframe_ids),
                          "n_points": len(n.cloud)})
        edges = [[e.from_id, e.to_id, e.kind] for e in self.edges]
        return {"nodes": nodes, "edges": edges,
                "passive_observations": [
                    {"agent": p.agent_id,
                     "path": [[q9(x) for x in pt] + [int(ts)]
                              for pt, ts in p.path_points]}
                    for p in self.passive_observations]}

    def snapshot_hash(self) -> str:
        payload = json.dumps(self.snapshot_json(), sort_keys=True,
                             separators=(",", ":")).encode()
        return hashlib.sha256(payload).hexdigest()

    # -- integrity ------------------------------------------------------------

    def keyframe_accounting(self) -> dict:
        """Every ingested keyframe appears in exactly one node's source list;
        live nodes plus passive path points cover every keyframe's position
        exactly once."""
        ids = []
        for n in self.nodes.values():
            ids.extend((n.agent_id, k) for k in n.source_keyframe_ids)
        assert len(ids) == len(set(ids)), "duplicated keyframe ids"
        assert len(ids) == self.ingested, "lost keyframe ids"
        n_points = sum(len(p.path_points) for p in self.passive_observations)
        assert len(self.nodes) + n_points == self.ingested
        return {"nodes": len(self.nodes), "passive_points": n_points,
                "ingested": self.ingested}

    def connected_components(self) -> list[set]:
        parent = {i: i for i in self.nodes}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for e in self.edges:
            if e.from_id == WORLD_ID:
                continue
            if e.from_id in parent and e.to_id in parent:
                ra, rb = find(e.from_id), find(e.to_id)
                if ra != rb:
                    parent[ra] = rb
        comps: dict[int, set] = {}
        for i in self.nodes:
            comps.setdefault(find(i), set()).add(i)
        return list(comps.values())
