"""Deterministic synthetic town: geometry, lane network, traffic, and a
panoptic range-sensor oracle.

A town is a rectilinear grid of two-way streets (``blocks`` streets per
axis, ``block_size`` meters apart). Every street crossing is a ground-truth
intersection. Each road carries one lane per direction under right-hand
traffic; at intersections every incoming lane connects to every outgoing
lane (U-turns included), which keeps the directed lane graph strongly
connected and marks every crossing with genuine splits and merges.

Vehicles follow lane centerlines at constant per-vehicle speed and pick a
uniformly random continuation at each junction (or follow a scripted
route). The sensor is an angular-bin z-buffer over the ground-truth point
shells: nearest return per azimuth/elevation bin, optional Gaussian noise
per coordinate. All randomness flows from explicit generators, so a
(spec, seed) pair reproduces bit-identical towns and trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import (NO_INSTANCE, Pose, SemanticClass, SemanticPointCloud,
                   Timestamp)
from .errors import ConfigurationError
from .geom import interp_along
from .lanegraph import LaneGraph

SIDEWALK_WIDTH = 2.0
BUILDING_MARGIN = 1.5
ROAD_GRID = 0.55
SIDEWALK_GRID = 0.65
WALL_GRID = 0.5
LANDMARK_GRID = 0.08
VEHICLE_GRID = 0.25
VEHICLE_DIMS = (4.5, 2.0, 1.5)
SPEED_RANGE = (0.8, 1.3)  # meters per simulation step


@dataclass(frozen=True)
class TownSpec:
    seed: int = 0
    blocks: int = 3             # streets per axis; crossings = blocks**2
    block_size: float = 40.0    # meters between adjacent parallel streets
    lane_width: float = 3.5
    num_passive_vehicles: int = 12
    landmark_density: float = 2.0  # signs/poles per road segment

    def validate(self):
        if self.blocks < 2:
            raise ConfigurationError("town needs at least a 2x2 street grid")
        if self.block_size <= 4 * self.lane_width:
            raise ConfigurationError("block_size too small for the road width")
        if self.num_passive_vehicles < 0 or self.landmark_density < 0:
            raise ConfigurationError("counts must be non-negative")


@dataclass(frozen=True)
class SensorSpec:
    channels: int = 32
    min_range: float = 10.0
    max_range: float = 50.0
    points_per_second: int = 56000
    rotation_frequency: float = 10.0
    elevation_range: tuple = (np.radians(-30.0), np.radians(10.0))
    mount_height: float = 2.8
    noise_sigma: float = 0.0

    def validate(self):
        if not (self.max_range > self.min_range > 0):
            raise ConfigurationError("need max_range > min_range > 0")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")

    @property
    def points_per_scan(self) -> int:
        return int(round(self.points_per_second / self.rotation_frequency))

    @property
    def azimuth_bins(self) -> int:
        return max(1, self.points_per_scan // self.channels)


@dataclass(frozen=True)
class GTLandmark:
    cls: SemanticClass
    position: np.ndarray   # box center (3,)
    box_min: np.ndarray
    box_max: np.ndarray


@dataclass(frozen=True)
class LaneEdge:
    """One directed lane of a road segment, as a straight centerline."""

    edge_id: int
    from_intersection: int
    to_intersection: int
    start: np.ndarray  # (2,)
    end: np.ndarray

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def direction(self) -> np.ndarray:
        d = self.end - self.start
        return d / max(np.linalg.norm(d), 1e-12)


class NavNetwork:
    """Lane-level connectivity used for vehicle navigation."""

    def __init__(self, lanes, outgoing, intersections):
        self.lanes: list[LaneEdge] = lanes
        self.outgoing: dict[int, list[int]] = outgoing  # intersection -> lane ids
        self.intersections: list[np.ndarray] = intersections

    def continuations(self, lane_id: int) -> list[int]:
        return self.outgoing[self.lanes[lane_id].to_intersection]

    def lane_polyline(self, lane_id: int) -> np.ndarray:
        lane = self.lanes[lane_id]
        return np.stack([lane.start, lane.end])


@dataclass
class GroundTruth:
    spec: TownSpec
    lane_graph: LaneGraph
    intersections: list      # (2,) crossing centers
    landmarks: list          # GTLandmark
    static_geometry: SemanticPointCloud  # world frame, stuff classes
    road_surface: SemanticPointCloud
    nav: NavNetwork
    bounds: tuple            # (xmin, ymin, xmax, ymax)
    _static_cells: dict = field(default_factory=dict, repr=False)
    _cell_size: float = field(default=16.0, repr=False)

    def static_near(self, xy: np.ndarray, radius: float) -> np.ndarray:
        """Indices of static points within radius (coarse cell prefilter)."""
        if not self._static_cells:
            cs = self._cell_size
            keys = np.floor(self.static_geometry.xyz[:, :2] / cs).astype(np.int64)
            for i, (cx, cy) in enumerate(keys):
                self._static_cells.setdefault((int(cx), int(cy)), []).append(i)
            for k in self._static_cells:
                self._static_cells[k] = np.array(self._static_cells[k],
                                                 dtype=np.int64)
        cs = self._cell_size
        lo = np.floor((xy - radius) / cs).astype(np.int64)
        hi = np.floor((xy + radius) / cs).astype(np.int64)
        chunks = []
        for cx in range(lo[0], hi[0] + 1):
            for cy in range(lo[1], hi[1] + 1):
                arr = self._static_cells.get((cx, cy))
                if arr is not None:
                    chunks.append(arr)
        if not chunks:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(chunks)


# ---------------------------------------------------------------------------
# geometry sampling helpers
# ---------------------------------------------------------------------------

def _plane_grid(x0, x1, y0, y1, z, step):
    xs = np.arange(x0 + step / 2, x1, step)
    ys = np.arange(y0 + step / 2, y1, step)
    if len(xs) == 0 or len(ys) == 0:
        return np.empty((0, 3))
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel(),
                            np.full(gx.size, float(z))])


def box_shell_points(bmin, bmax, step, top=True) -> np.ndarray:
    """Sample the four vertical faces (and optionally the top) of a box."""
    bmin = np.asarray(bmin, dtype=np.float64)
    bmax = np.asarray(bmax, dtype=np.float64)
    faces = []
    xs = np.arange(bmin[0] + step / 2, bmax[0], step)
    ys = np.arange(bmin[1] + step / 2, bmax[1], step)
    zs = np.arange(bmin[2] + step / 2, bmax[2], step)
    if len(xs) == 0:
        xs = np.array([(bmin[0] + bmax[0]) / 2])
    if len(ys) == 0:
        ys = np.array([(bmin[1] + bmax[1]) / 2])
    if len(zs) == 0:
        zs = np.array([(bmin[2] + bmax[2]) / 2])
    gx, gz = np.meshgrid(xs, zs)
    faces.append(np.column_stack([gx.ravel(), np.full(gx.size, bmin[1]),
                                  gz.ravel()]))
    faces.append(np.column_stack([gx.ravel(), np.full(gx.size, bmax[1]),
                                  gz.ravel()]))
    gy, gz = np.meshgrid(ys, zs)
    faces.append(np.column_stack([np.full(gy.size, bmin[0]), gy.ravel(),
                                  gz.ravel()]))
    faces.append(np.column_stack([np.full(gy.size, bmax[0]), gy.ravel(),
                                  gz.ravel()]))
    if top:
        gx, gy = np.meshgrid(xs, ys)
        faces.append(np.column_stack([gx.ravel(), gy.ravel(),
                                      np.full(gx.size, bmax[2])]))
    return np.vstack(faces)


_VEHICLE_SHELL = None


def vehicle_shell() -> np.ndarray:
    """Box-shell template of a vehicle, centered at the ground midpoint."""
    global _VEHICLE_SHELL
    if _VEHICLE_SHELL is None:
        lx, ly, lz = VEHICLE_DIMS
        _VEHICLE_SHELL = box_shell_points(
            (-lx / 2, -ly / 2, 0.0), (lx / 2, ly / 2, lz), VEHICLE_GRID)
        _VEHICLE_SHELL.setflags(write=False)
    return _VEHICLE_SHELL


# ---------------------------------------------------------------------------
# town generation
# ---------------------------------------------------------------------------

def _build_nav(spec: TownSpec) -> tuple[NavNetwork, list]:
    b = spec.blocks
    bs = spec.block_size
    half = spec.lane_width          # road half-width
    off = spec.lane_width / 2.0     # lane offset from street centerline
    coords = [i * bs for i in range(b)]
    centers = {}
    inter_pts = []
    for j in range(b):
        for i in range(b):
            iid = j * b + i
            centers[iid] = np.array([coords[i], coords[j]])
            inter_pts.append(centers[iid])
    lanes = []
    outgoing: dict[int, list[int]] = {iid: [] for iid in centers}

    def add_lane(a, b_):
        ca, cb = centers[a], centers[b_]
        d = cb - ca
        d = d / np.linalg.norm(d)
        right = np.array([d[1], -d[0]])
        start = ca + d * half + right * off
        end = cb - d * half + right * off
        lane = LaneEdge(len(lanes), a, b_, start, end)
        lanes.append(lane)
        outgoing[a].append(lane.edge_id)

    for j in range(b):
        for i in range(b - 1):
            add_lane(j * b + i, j * b + i + 1)
            add_lane(j * b + i + 1, j * b + i)
    for j in range(b - 1):
        for i in range(b):
            add_lane(j * b + i, (j + 1) * b + i)
            add_lane((j + 1) * b + i, j * b + i)
    return NavNetwork(lanes, outgoing, inter_pts), inter_pts


def _build_gt_lane_graph(nav: NavNetwork, spacing: float = 2.0) -> LaneGraph:
    from .geom import resample_polyline
    g = LaneGraph()
    ends = {}
    for lane in nav.lanes:
        pts = resample_polyline(np.stack([lane.start, lane.end]), spacing)
        d = lane.direction
        yaw = float(np.arctan2(d[1], d[0]))
        ids = [g.add_node(p, yaw) for p in pts]
        for a_, b_ in zip(ids[:-1], ids[1:]):
            g.add_edge(a_, b_)
        ends[lane.edge_id] = (ids[0], ids[-1])
    for iid, lane_ids in nav.outgoing.items():
        incoming = [l for l in nav.lanes if l.to_intersection == iid]
        for lin in incoming:
            for lout_id in lane_ids:
                lout = nav.lanes[lout_id]
                a_ = ends[lin.edge_id][1]
                b_ = ends[lout.edge_id][0]
                pa, pb = g.nodes[a_], g.nodes[b_]
                gap = float(np.linalg.norm(pb - pa))
                if gap < 1e-9:
                    continue
                mids = resample_polyline(np.stack([pa, pb]), spacing)[1:-1]
                yaw = float(np.arctan2(pb[1] - pa[1], pb[0] - pa[0]))
                prev = a_
                for m in mids:
                    nid = g.add_node(m, yaw)
                    g.add_edge(prev, nid)
                    prev = nid
                g.add_edge(prev, b_)
    return g


def _landmark_box(cls: SemanticClass, x: float, y: float) -> GTLandmark:
    if cls == SemanticClass.TrafficSign:
        dims, zc = (0.8, 0.12, 0.8), 1.8
    elif cls == SemanticClass.Pole:
        dims, zc = (0.14, 0.14, 3.0), 1.5
    else:  # TrafficLight
        dims, zc = (0.35, 0.35, 1.1), 3.0
    half = np.array(dims) / 2.0
    center = np.array([x, y, zc])
    return GTLandmark(cls, center, center - half, center + half)


def generate_town(spec: TownSpec) -> GroundTruth:
    """Build the full deterministic ground truth for a town spec."""
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 101]))
    b, bs = spec.blocks, spec.block_size
    half = spec.lane_width
    extent = (b - 1) * bs
    coords = [i * bs for i in range(b)]
    nav, inter_pts = _build_nav(spec)
    lane_graph = _build_gt_lane_graph(nav)

    clouds = []

    def add(points, cls):
        if len(points):
            clouds.append((points, int(cls)))

    # road surfaces: one full-length rectangle per street, both axes
    for c in coords:
        add(_plane_grid(-half, extent + half, c - half, c + half, 0.0,
                        ROAD_GRID), SemanticClass.Road)
        add(_plane_grid(c - half, c + half, -half, extent + half, 0.0,
                        ROAD_GRID), SemanticClass.Road)
    road_pts = np.vstack([p for p, c in clouds]) if clouds else np.empty((0, 3))
    n_road = sum(len(p) for p, _ in clouds)

    # sidewalks flank every street
    for c in coords:
        for side in (-1, 1):
            lo = c + side * half + (0 if side > 0 else -SIDEWALK_WIDTH)
            add(_plane_grid(-half, extent + half, lo, lo + SIDEWALK_WIDTH,
                            0.0, SIDEWALK_GRID), SemanticClass.SideWalk)
            add(_plane_grid(lo, lo + SIDEWALK_WIDTH, -half, extent + half,
                            0.0, SIDEWALK_GRID), SemanticClass.SideWalk)

    # buildings fill block interiors and a band outside the ring roads
    inner = half + SIDEWALK_WIDTH + BUILDING_MARGIN

    def add_building(x0, x1, y0, y1):
        if x1 - x0 < 4.0 or y1 - y0 < 4.0:
            return
        w = x1 - x0
        h = y1 - y0
        sx = x0 + rng.uniform(0.0, 0.25) * w
        sy = y0 + rng.uniform(0.0, 0.25) * h
        ex = x1 - rng.uniform(0.0, 0.25) * w
        ey = y1 - rng.uniform(0.0, 0.25) * h
        height = rng.uniform(6.0, 10.0)
        add(box_shell_points((sx, sy, 0.0), (ex, ey, height), WALL_GRID,
                             top=False), SemanticClass.Building)

    for j in range(b - 1):
        for i in range(b - 1):
            x0, x1 = coords[i] + inner, coords[i + 1] - inner
            y0, y1 = coords[j] + inner, coords[j + 1] - inner
            mx, my = (x0 + x1) / 2, (y0 + y1) / 2
            add_building(x0, mx - 1.5, y0, my - 1.5)
            add_building(mx + 1.5, x1, y0, my - 1.5)
            add_building(x0, mx - 1.5, my + 1.5, y1)
            add_building(mx + 1.5, x1, my + 1.5, y1)
    band = 10.0
    for i in range(b - 1):
        x0, x1 = coords[i] + inner, coords[i + 1] - inner
        add_building(x0, x1, -inner - band, -inner)
        add_building(x0, x1, extent + inner, extent + inner + band)
        add_building(-inner - band, -inner, x0, x1)
        add_building(extent + inner, extent + inner + band, x0, x1)

    # landmarks: alternating signs and poles along segments, lights at crossings
    landmarks = []
    k = int(round(spec.landmark_density))
    lateral = half + SIDEWALK_WIDTH / 2.0
    segments = []
    for c in coords:
        for i in range(b - 1):
            segments.append((np.array([coords[i], c]),
                             np.array([coords[i + 1], c])))
            segments.append((np.array([c, coords[i]]),
                             np.array([c, coords[i + 1]])))
    for a_, b_ in segments:
        d = (b_ - a_) / np.linalg.norm(b_ - a_)
        right = np.array([d[1], -d[0]])
        seglen = float(np.linalg.norm(b_ - a_))
        for m in range(k):
            frac = (m + 0.5) / k + rng.uniform(-0.05, 0.05)
            side = 1 if (m % 2 == 0) else -1
            cls = SemanticClass.TrafficSign if m % 2 == 0 else SemanticClass.Pole
            p = a_ + d * (frac * seglen) + right * (side * lateral)
            landmarks.append(_landmark_box(cls, p[0], p[1]))
    if k > 0:
        for iid, c in enumerate(inter_pts):
            for corner in ((1, 1), (-1, -1)):
                p = c + np.array(corner, dtype=np.float64) * lateral
                landmarks.append(_landmark_box(SemanticClass.TrafficLight,
                                               p[0], p[1]))
    for lm in landmarks:
        add(box_shell_points(lm.box_min, lm.box_max, LANDMARK_GRID),
            lm.cls)

    xyz = np.vstack([p for p, _ in clouds])
    classes = np.concatenate([np.full(len(p), c, dtype=np.int16)
                              for p, c in clouds])
    static = SemanticPointCloud(xyz, classes, frame="world")
    road_surface = SemanticPointCloud(road_pts,
                                      np.full(n_road, int(SemanticClass.Road),
                                              dtype=np.int16), frame="world")
    margin = inner + band + 2.0
    bounds = (-margin, -margin, extent + margin, extent + margin)
    return GroundTruth(spec, lane_graph, inter_pts, landmarks, static,
                       road_surface, nav, bounds)


# ---------------------------------------------------------------------------
# traffic
# ---------------------------------------------------------------------------

@dataclass
class VehicleState:
    id: int
    pose: Pose
    speed: float
    current_lane_edge: int
    is_agent: bool
    _poly: np.ndarray = field(default=None, repr=False)
    _s: float = 0.0
    _route: list = field(default=None, repr=False)  # scripted lane ids
    _route_pos: int = 0


@dataclass
class WorldState:
    vehicles: list
    step: Timestamp = 0


def _vehicle_pose(v: VehicleState):
    xy, yaw = interp_along(v._poly, v._s)
    return Pose.from_xy_yaw(float(xy[0]), float(xy[1]), yaw)


def spawn_vehicles(gt: GroundTruth, n_agents: int, n_passive: int,
                   rng: np.random.Generator,
                   agent_routes: dict[int, list[int]] | None = None,
                   ) -> WorldState:
    """Place agents and passive vehicles on seeded random lanes.

    agent_routes optionally pins an agent to a cyclic list of lane ids;
    its spawn moves to the first lane of the route.
    """
    n_lanes = len(gt.nav.lanes)
    if n_agents + n_passive == 0:
        return WorldState([])
    agent_lanes = rng.choice(n_lanes, size=min(n_agents, n_lanes),
                             replace=False)
    vehicles = []
    for vid in range(n_agents + n_passive):
        is_agent = vid < n_agents
        if is_agent:
            lane_id = int(agent_lanes[vid % len(agent_lanes)])
            route = None
            if agent_routes and vid in agent_routes and agent_routes[vid]:
                route = list(agent_routes[vid])
                lane_id = route[0]
        else:
            lane_id = int(rng.integers(n_lanes))
            route = None
        lane = gt.nav.lanes[lane_id]
        poly = np.stack([lane.start, lane.end])
        s = float(rng.uniform(0.0, lane.length * 0.5))
        speed = float(rng.uniform(*SPEED_RANGE))
        v = VehicleState(vid, Pose.identity(), speed, lane_id, is_agent,
                         _poly=poly, _s=s, _route=route,
                         _route_pos=1 if route else 0)
        v.pose = _vehicle_pose(v)
        vehicles.append(v)
    return WorldState(vehicles)


def _advance_vehicle(v: VehicleState, gt: GroundTruth,
                     rng: np.random.Generator):
    v._s += v.speed
    seg = np.diff(v._poly, axis=0)
    total = float(np.sum(np.linalg.norm(seg, axis=1)))
    while v._s > total:
        over = v._s - total
        end = v._poly[-1]
        if v._route is not None:
            nxt = v._route[v._route_pos % len(v._route)]
            v._route_pos += 1
        else:
            options = gt.nav.continuations(v.current_lane_edge)
            nxt = options[int(rng.integers(len(options)))]
        lane = gt.nav.lanes[nxt]
        v._poly = np.stack([end, lane.start, lane.end])
        v.current_lane_edge = nxt
        v._s = over
        seg = np.diff(v._poly, axis=0)
        total = float(np.sum(np.linalg.norm(seg, axis=1)))
    v.pose = _vehicle_pose(v)


def step_world(state: WorldState, gt: GroundTruth,
               rng: np.random.Generator) -> WorldState:
    """Advance every vehicle along the lane network by its speed."""
    for v in state.vehicles:
        _advance_vehicle(v, gt, rng)
    state.step += 1
    return state


# ---------------------------------------------------------------------------
# sensing
# ---------------------------------------------------------------------------

def sensor_pose(vehicle_pose: Pose, spec: SensorSpec) -> Pose:
    return vehicle_pose.compose(Pose.from_translation(0, 0, spec.mount_height))


def sense(gt: GroundTruth, world: WorldState, observer: VehicleState,
          spec: SensorSpec, rng: np.random.Generator) -> SemanticPointCloud:
    """Panoptic scan from the observer's sensor: nearest return per
    azimuth/elevation bin over static geometry and other vehicles' shells,
    labeled with class and (for vehicles) a temporally consistent instance
    id equal to the vehicle id. Gaussian noise is added per coordinate after
    visibility is resolved."""
    pose = sensor_pose(observer.pose, spec)
    center = pose.t[:2]
    idx = gt.static_near(center, spec.max_range + 1.0)
    world_pts = [gt.static_geometry.xyz[idx]]
    classes = [gt.static_geometry.classes[idx]]
    inst = [np.full(len(idx), NO_INSTANCE, dtype=np.int64)]
    shell = vehicle_shell()
    for v in world.vehicles:
        if v.id == observer.id:
            continue
        if np.linalg.norm(v.pose.t[:2] - center) > spec.max_range + 4.0:
            continue
        pts = v.pose.apply(shell)
        world_pts.append(pts)
        classes.append(np.full(len(pts), int(SemanticClass.Vehicles),
                               dtype=np.int16))
        inst.append(np.full(len(pts), v.id, dtype=np.int64))
    xyz_w = np.vstack(world_pts)
    cls = np.concatenate(classes)
    iid = np.concatenate(inst)
    if len(xyz_w) == 0:
        return SemanticPointCloud.empty("sensor")
    r = pose.rotation_matrix()
    local = (xyz_w - pose.t) @ r
    el_min, el_max = spec.elevation_range
    sel = kernels.zbuffer_select(local, spec.azimuth_bins, spec.channels,
                                 el_min, el_max, spec.min_range,
                                 spec.max_range)
    pts = local[sel]
    if spec.noise_sigma > 0 and len(pts):
        pts = pts + rng.normal(0.0, spec.noise_sigma, pts.shape)
    return SemanticPointCloud(pts, cls[sel], iid[sel], frame="sensor")


# ---------------------------------------------------------------------------
# scripted coverage routes
# ---------------------------------------------------------------------------

def eulerian_lane_route(gt: GroundTruth, start_lane: int = 0,
                        lane_subset=None) -> list[int]:
    """Closed route visiting every lane once (Hierholzer).

    The directed lane network is balanced (every road is two-way and every
    incoming lane can continue into every outgoing one), so an Eulerian
    circuit over any strongly connected lane subset exists. Used to script
    full- or partial-coverage agents deterministically.
    """
    lanes = gt.nav.lanes
    allowed = set(range(len(lanes))) if lane_subset is None else set(lane_subset)
    out_by_node: dict[int, list[int]] = {}
    for lid in sorted(allowed):
        out_by_node.setdefault(lanes[lid].from_intersection, []).append(lid)
    for lst in out_by_node.values():
        lst.sort(reverse=True)
    if start_lane not in allowed:
        start_lane = min(allowed)
    remaining = {k: list(v) for k, v in out_by_node.items()}
    remaining[lanes[start_lane].from_intersection].remove(start_lane)
    stack = [start_lane]
    circuit = []
    while stack:
        lid = stack[-1]
        node = lanes[lid].to_intersection
        if remaining.get(node):
            stack.append(remaining[node].pop())
        else:
            circuit.append(stack.pop())
    circuit.reverse()
    return circuit
