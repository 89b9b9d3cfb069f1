"""Ego-centric input construction for the decision module: sampled lane
lines, legal-region edges, nearest-neighbor features, and the flat
observation vector."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Polyline, Pose2D, to_frame
from .world_sim import KMH, Lane, World

# Forward arc-length sample offsets, doubling out to the 64 m horizon; near
# samples are dense, mimicking a range sensor.
SAMPLE_OFFSETS = np.array([1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0])
K = len(SAMPLE_OFFSETS)

NEIGHBOR_LIMIT = 6
NEIGHBOR_RANGE = 70.0
SENTINEL = np.array([NEIGHBOR_RANGE, 0.0, 0.0, 0.0])

OBS_DIM = 4 * K * 2 + NEIGHBOR_LIMIT * 4 + 2  # 82 for K=7

# Scenario-wide allowed speed; the fastest configured traffic stays below it.
V_ALLOW = 40.0 * KMH

OFF_ROUTE_MARGIN = 7.0   # meters of lateral drift before the episode aborts

POSITION_SCALE = 70.0
SPEED_SCALE = 15.0


class OffRouteError(RuntimeError):
    pass


@dataclass
class LateralRoute:
    """Drivable corridor for one lateral choice: world-frame geometry plus the
    ego's projected arc length on it."""

    poly: Polyline
    start_s: float
    lane_ids: list[str]


@dataclass
class LocalMap:
    cur_left: np.ndarray            # (K, 2) ego frame
    cur_right: np.ndarray
    legal_left: np.ndarray
    legal_right: np.ndarray
    neighbors: np.ndarray           # (6, 4): rel x, rel y, rel vx, rel vy
    n_neighbors: int
    ego_speed: float
    ego_accel: float
    ego_pose: Pose2D
    current_lane_id: str
    lane_width: float
    v_allow: float
    route_ids: list[str]
    routes: dict[str, LateralRoute | None] = field(default_factory=dict)  # keep/left/right


def sample_lane_points(line: Polyline, ego_pose: Pose2D) -> np.ndarray:
    """K points at the fixed forward offsets from the ego's projection,
    expressed in the ego frame; offsets past the end clamp to the endpoint."""
    s0, _ = line.project(ego_pose.xy)
    pts = line.points_at(s0 + SAMPLE_OFFSETS)
    return to_frame(pts, ego_pose.xy, ego_pose.heading)


def nearest_vehicles(world: World) -> tuple[np.ndarray, int]:
    """Up to 6 closest zombies within 70 m, closest first, as ego-frame
    relative positions and velocities; missing slots hold the sentinel row."""
    out = np.tile(SENTINEL, (NEIGHBOR_LIMIT, 1))
    if not world.zombies:
        return out, 0
    ego = world.ego
    ex, ey, eh = ego.pose.x, ego.pose.y, ego.pose.heading
    c, s = math.cos(eh), math.sin(eh)
    evx, evy = ego.speed * c, ego.speed * s
    rows = []
    for z in world.zombies:
        dx = z.state.pose.x - ex
        dy = z.state.pose.y - ey
        d = math.hypot(dx, dy)
        if d > NEIGHBOR_RANGE:
            continue
        zvx = z.state.speed * math.cos(z.state.pose.heading) - evx
        zvy = z.state.speed * math.sin(z.state.pose.heading) - evy
        rows.append((d, (c * dx + s * dy, -s * dx + c * dy,
                         c * zvx + s * zvy, -s * zvx + c * zvy)))
    rows.sort(key=lambda r: r[0])
    n = min(len(rows), NEIGHBOR_LIMIT)
    for i in range(n):
        out[i] = rows[i][1]
    return out, n


def _count_legal(lanes: dict[str, Lane], lane_id: str, side: str) -> int:
    n = 0
    cur = lanes[lane_id]
    while n < 4:
        nid = cur.left_id if side == "left" else cur.right_id
        if nid is None or not lanes[nid].legal:
            break
        n += 1
        cur = lanes[nid]
    return n


class RouteView:
    """Concatenated route geometry that remembers which lane owns each
    segment; built once per (world, head lane) and cached on the world."""

    def __init__(self, lanes: dict[str, Lane], ids: list[str]) -> None:
        pts_parts: list[np.ndarray] = []
        owner_parts: list[np.ndarray] = []
        end = None
        for k, lid in enumerate(ids):
            center = lanes[lid].center
            tail = center.pts if end is None else center.tail_from(center.project(end)[0])
            pts_parts.append(tail)
            owner_parts.append(np.full(len(tail), k))
            end = tail[-1]
        pts = np.vstack(pts_parts)
        owners = np.concatenate(owner_parts)
        keep = np.ones(len(pts), dtype=bool)
        keep[1:] = np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-12
        self.poly = Polyline(pts[keep])
        self._seg_owner = owners[keep][:-1].astype(int)
        self.ids = ids
        self.left_counts = np.array([_count_legal(lanes, lid, "left") for lid in ids])
        self.right_counts = np.array([_count_legal(lanes, lid, "right") for lid in ids])
        self.widths = np.array([lanes[lid].width for lid in ids])

    def owners_at(self, ss: np.ndarray) -> np.ndarray:
        idx = self.poly.seg_index_at(ss)
        return self._seg_owner[np.minimum(idx, len(self._seg_owner) - 1)]

    def lane_id_at(self, s: float) -> str:
        return self.ids[int(self.owners_at(np.array([s]))[0])]


def _chain_from(lanes: dict[str, Lane], lane_id: str, routing: list[str]) -> list[str]:
    if lane_id in routing:
        return routing[routing.index(lane_id):]
    ids = [lane_id]
    cur = lanes[lane_id]
    while cur.successors and len(ids) < 5:
        nxt = cur.successors[0]
        if nxt in ids:
            break
        ids.append(nxt)
        cur = lanes[nxt]
    return ids


def _view_for(world: World, lane_id: str, routing: tuple[str, ...]) -> RouteView:
    key = (lane_id, routing)
    view = world.route_views.get(key)
    if view is None:
        view = RouteView(world.lanes, _chain_from(world.lanes, lane_id, list(routing)))
        world.route_views[key] = view
    return view


def build_local_map(world: World, routing: list[str] | None = None) -> LocalMap:
    """Assemble the decision input for the current world state.

    Raises OffRouteError when the ego has drifted laterally beyond recovery
    margin from every candidate lane.
    """
    lanes = world.lanes
    routing = tuple(routing if routing is not None else world.ego_route)
    ego = world.ego

    candidates: list[str] = []
    for lid in routing:
        for cid in (lid, lanes[lid].left_id, lanes[lid].right_id):
            if cid is not None and cid not in candidates:
                candidates.append(cid)
    best_id, best_lat = None, float("inf")
    for cid in candidates:
        center = lanes[cid].center
        s, lat = center.project(ego.pose.xy)
        if -3.0 <= s <= center.length + 3.0 and abs(lat) < abs(best_lat):
            best_id, best_lat = cid, lat
    if best_id is None or abs(best_lat) > OFF_ROUTE_MARGIN:
        raise OffRouteError(f"ego {ego.pose.xy} beyond recovery margin of route {routing}")
    current = lanes[best_id]

    routes: dict[str, LateralRoute | None] = {}
    keep_view = _view_for(world, best_id, routing)
    keep_s = float(keep_view.poly.project(ego.pose.xy)[0])
    routes["keep"] = LateralRoute(keep_view.poly, keep_s, keep_view.ids)
    for side, nid in (("left", current.left_id), ("right", current.right_id)):
        if nid is not None and lanes[nid].legal:
            view = _view_for(world, nid, routing)
            routes[side] = LateralRoute(view.poly, float(view.poly.project(ego.pose.xy)[0]),
                                        view.ids)
        else:
            routes[side] = None

    # Current-lane boundary samples follow the lane's own centerline and
    # clamp at its end.
    s_cur, _ = current.center.project(ego.pose.xy)
    centers, headings, _ = current.center.sample_many(s_cur + SAMPLE_OFFSETS)
    normals = np.stack([-np.sin(headings), np.cos(headings)], axis=1)
    half = current.width / 2.0

    # Legal-region edges follow the routed corridor, widening over contiguous
    # legal neighbor lanes.
    rpts, rheadings, ridx = keep_view.poly.sample_many(keep_s + SAMPLE_OFFSETS)
    rnormals = np.stack([-np.sin(rheadings), np.cos(rheadings)], axis=1)
    owners = keep_view._seg_owner[np.minimum(ridx, len(keep_view._seg_owner) - 1)]
    nl = keep_view.left_counts[owners]
    nr = keep_view.right_counts[owners]
    w_here = keep_view.widths[owners]

    stacked = np.vstack([
        centers + half * normals,
        centers - half * normals,
        rpts + ((nl + 0.5) * w_here)[:, None] * rnormals,
        rpts - ((nr + 0.5) * w_here)[:, None] * rnormals,
    ])
    local = to_frame(stacked, ego.pose.xy, ego.pose.heading)
    cur_left, cur_right, legal_l, legal_r = np.split(local, 4)

    neighbors, n = nearest_vehicles(world)
    return LocalMap(cur_left, cur_right, legal_l, legal_r, neighbors, n,
                    ego.speed, ego.acceleration, ego.pose.copy(),
                    best_id, current.width, V_ALLOW, list(routing), routes)


def encode_observation(lmap: LocalMap) -> np.ndarray:
    """Flatten to the fixed layout:
    [cur-left | cur-right | legal-left | legal-right | 6 neighbor rows |
     ego speed | ego accel] -> 82 entries for K=7."""
    return np.concatenate([
        lmap.cur_left.ravel(), lmap.cur_right.ravel(),
        lmap.legal_left.ravel(), lmap.legal_right.ravel(),
        lmap.neighbors.ravel(),
        [lmap.ego_speed, lmap.ego_accel],
    ])


_SCALE = np.ones(OBS_DIM)
_SCALE[:4 * K * 2] = POSITION_SCALE
for _i in range(NEIGHBOR_LIMIT):
    _SCALE[56 + 4 * _i:58 + 4 * _i] = POSITION_SCALE
    _SCALE[58 + 4 * _i:60 + 4 * _i] = SPEED_SCALE
_SCALE[OBS_DIM - 2] = SPEED_SCALE


def normalize_observation(obs: np.ndarray) -> np.ndarray:
    """Scale positions by 70 m and speeds by 15 m/s so network inputs stay
    O(1); acceleration already is."""
    return np.asarray(obs, dtype=float) / _SCALE
