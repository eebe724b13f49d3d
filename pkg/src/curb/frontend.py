"""Per-agent onboard pipeline.

Each scan is split into stuff and things, the stuff half is voxel-filtered
with class-dependent resolutions and registered against the previous
filtered scan for odometry. Keyframes are emitted after a fixed traveled
distance and carry the filtered static cloud plus all vehicle-centroid
observations accumulated since the last keyframe, re-anchored to the new
keyframe frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import (NO_INSTANCE, Pose, SemanticClass, SemanticPointCloud,
                   THING_CLASSES, Timestamp)
from .errors import RegistrationError
from .registration import IcpParams, icp_register

FINE_CLASSES = (SemanticClass.Fence, SemanticClass.Pole,
                SemanticClass.TrafficSign, SemanticClass.GuardRail,
                SemanticClass.TrafficLight, SemanticClass.Static,
                SemanticClass.Dynamic)
FINE_EDGE = 0.15
COARSE_EDGE = 0.5

KEYFRAME_DISTANCE = 2.0

# Ground planes are kept in the map but excluded from scan registration:
# range-binned ground returns form sensor-centered rings that bias
# point-to-point ICP toward zero motion.
GROUND_CLASSES = frozenset({SemanticClass.Road, SemanticClass.SideWalk,
                            SemanticClass.Terrain, SemanticClass.Ground})


def registration_view(cloud: SemanticPointCloud) -> SemanticPointCloud:
    """Structural subset of a stuff cloud used for ICP."""
    mask = ~np.isin(cloud.classes, [int(c) for c in GROUND_CLASSES])
    return cloud.select(mask)


@dataclass(frozen=True)
class VoxelPolicy:
    """Voxel edge length per semantic class, meters."""

    edges: dict

    @staticmethod
    def default() -> "VoxelPolicy":
        table = {int(c): COARSE_EDGE for c in SemanticClass}
        for c in FINE_CLASSES:
            table[int(c)] = FINE_EDGE
        return VoxelPolicy(table)

    def edge_for(self, cls: int) -> float:
        return self.edges.get(int(cls), COARSE_EDGE)


def split_stuff_things(cloud: SemanticPointCloud):
    """Partition a cloud by the stuff/thing class map; sizes sum to input."""
    thing_mask = np.isin(cloud.classes, [int(c) for c in THING_CLASSES])
    return cloud.select(~thing_mask), cloud.select(thing_mask)


def semantic_voxel_filter(cloud: SemanticPointCloud,
                          policy: VoxelPolicy) -> SemanticPointCloud:
    """One centroid per occupied class voxel.

    Points are bucketed per (class, instance) with the class's edge length,
    anchored at the frame origin; each occupied voxel contributes the
    centroid of its members. Output is ordered by class, instance, then
    voxel key, so filtering is deterministic and idempotent.
    """
    if len(cloud) == 0:
        return cloud
    out_xyz, out_cls, out_inst = [], [], []
    for cls in np.unique(cloud.classes):
        cls_mask = cloud.classes == cls
        edge = policy.edge_for(int(cls))
        insts = np.unique(cloud.instance_ids[cls_mask])
        for inst in insts:
            mask = cls_mask & (cloud.instance_ids == inst)
            cents, _, _, _ = kernels.voxel_group(cloud.xyz[mask], edge)
            out_xyz.append(cents)
            out_cls.append(np.full(len(cents), cls, dtype=np.int16))
            out_inst.append(np.full(len(cents), inst, dtype=np.int64))
    return SemanticPointCloud(np.vstack(out_xyz), np.concatenate(out_cls),
                              np.concatenate(out_inst), cloud.frame)


def voxel_occupancy_keys(cloud: SemanticPointCloud,
                         policy: VoxelPolicy) -> set:
    """Set of (class, instance, voxel key) cells occupied by the cloud."""
    occupied = set()
    for cls in np.unique(cloud.classes):
        cls_mask = cloud.classes == cls
        edge = policy.edge_for(int(cls))
        for inst in np.unique(cloud.instance_ids[cls_mask]):
            mask = cls_mask & (cloud.instance_ids == inst)
            _, _, keys, _ = kernels.voxel_group(cloud.xyz[mask], edge)
            occupied.update((int(cls), int(inst), int(k)) for k in keys)
    return occupied


@dataclass(frozen=True)
class DynamicObservation:
    """Centroid of one vehicle's partial cloud, relative to a keyframe."""

    instance_id: int
    centroid_rel: np.ndarray  # (3,) in the anchor keyframe's frame
    timestamp: Timestamp
    anchor_keyframe: int


@dataclass(frozen=True)
class KeyframePackage:
    agent_id: int
    keyframe_id: int
    odometry_pose_delta: Pose
    static_cloud: SemanticPointCloud  # keyframe frame, voxel-filtered stuff
    dynamic_observations: tuple
    timestamp: Timestamp


def extract_dynamic_observations(things: SemanticPointCloud, cur_pose: Pose,
                                 last_keyframe_pose: Pose,
                                 timestamp: Timestamp,
                                 anchor_keyframe: int):
    """Per-instance vehicle centroids expressed in the last keyframe frame."""
    out = []
    mask = things.classes == int(SemanticClass.Vehicles)
    if not mask.any():
        return out
    rel_pose = last_keyframe_pose.inverse().compose(cur_pose)
    for inst in np.unique(things.instance_ids[mask]):
        pts = things.xyz[mask & (things.instance_ids == inst)]
        centroid = rel_pose.apply(pts.mean(axis=0))
        out.append(DynamicObservation(int(inst), centroid, timestamp,
                                      anchor_keyframe))
    return out


class AgentFrontend:
    """Stateful per-agent pipeline; one instance per agent, single-threaded.

    ``process_scan`` consumes a raw sensor-frame scan and returns a
    KeyframePackage when the traveled distance since the last keyframe
    crosses the threshold (always on the first scan).
    """

    def __init__(self, agent_id: int, policy: VoxelPolicy | None = None,
                 keyframe_distance: float = KEYFRAME_DISTANCE,
                 icp_params: IcpParams = IcpParams()):
        self.agent_id = agent_id
        self.policy = policy or VoxelPolicy.default()
        self.keyframe_distance = keyframe_distance
        self.icp_params = icp_params
        self.pose = Pose.identity()  # local odometry frame
        self.last_delta = Pose.identity()
        self.prev_scan = None
        self.last_kf_pose = None
        self.next_keyframe_id = 0
        self.last_timestamp = None
        self.pending = []  # DynamicObservation anchored to the last keyframe
        self.failed_scans = 0

    def odometry_step(self, cur_filtered: SemanticPointCloud) -> Pose:
        """Scan-to-scan ICP on the structural static points; returns the
        updated pose. On registration failure the pose is held and the scan
        flagged."""
        try:
            delta, _ = icp_register(registration_view(cur_filtered).xyz,
                                    registration_view(self.prev_scan).xyz,
                                    self.last_delta, self.icp_params)
            self.last_delta = delta
        except RegistrationError:
            self.failed_scans += 1
            delta = Pose.identity()
        self.pose = self.pose.compose(delta)
        return self.pose

    def process_scan(self, scan: SemanticPointCloud,
                     timestamp: Timestamp) -> KeyframePackage | None:
        if self.last_timestamp is not None and timestamp < self.last_timestamp:
            raise ValueError("timestamps must be non-decreasing")
        self.last_timestamp = timestamp
        stuff, things = split_stuff_things(scan)
        filtered = semantic_voxel_filter(stuff, self.policy)
        first = self.prev_scan is None
        if not first:
            self.odometry_step(filtered)
        self.prev_scan = filtered
        if not first:
            self.pending.extend(extract_dynamic_observations(
                things, self.pose, self.last_kf_pose, timestamp,
                self.next_keyframe_id - 1))
        return self._maybe_emit_keyframe(filtered, things, timestamp, first)

    def _maybe_emit_keyframe(self, filtered, things, timestamp, first):
        if first:
            delta = Pose.identity()
        else:
            delta = self.last_kf_pose.inverse().compose(self.pose)
            if float(np.linalg.norm(delta.t)) < self.keyframe_distance:
                return None
        kf_id = self.next_keyframe_id
        self.next_keyframe_id += 1
        # re-anchor pending observations from the previous keyframe to this one
        obs = tuple(
            DynamicObservation(o.instance_id,
                               delta.inverse().apply(o.centroid_rel),
                               o.timestamp, kf_id)
            for o in self.pending)
        self.pending = []
        if first:
            self.pending.extend(extract_dynamic_observations(
                things, self.pose, self.pose, timestamp, kf_id))
            obs = tuple(self.pending)
            self.pending = []
        self.last_kf_pose = self.pose
        return KeyframePackage(self.agent_id, kf_id, delta,
                               filtered.with_frame("keyframe"), obs, timestamp)
