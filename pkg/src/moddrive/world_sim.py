"""Deterministic 2D road-network simulator: kinematic-bicycle ego, scripted
waypoint-following traffic, scenario generators, and collision detection.

All randomness is drawn once at scenario creation from the seeded generator;
stepping is a pure function of (world, controls), so identical configs and
control sequences reproduce bit-identical episodes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .controller import ControlAction, clamp
from .geometry import Polyline, Pose2D, arc_points, concat_polylines, wrap_angle

DT = 0.1                 # control tick, seconds
WHEELBASE = 2.7          # meters
HALF_LENGTH = 2.3        # meters (4.6 m vehicle)
HALF_WIDTH = 1.0         # meters (2.0 m vehicle)
ACCEL_MAX = 3.0          # m/s^2 at lon=+1
BRAKE_MAX = 6.0          # m/s^2 at lon=-1
LANE_WIDTH = 3.5         # meters
GOAL_RADIUS = 3.0        # meters
KMH = 1.0 / 3.6          # km/h -> m/s


class UnknownScenarioError(ValueError):
    pass


class EpisodeDoneError(RuntimeError):
    pass


class ScenarioKind(str, Enum):
    EMPTY_TOWN = "EmptyTown"
    SINGLE_LANE_FOLLOWING = "SingleLaneFollowing"
    TWO_LANES_FOLLOWING = "TwoLanesFollowing"
    CROSSROAD_MERGE = "CrossroadMerge"
    ROUNDABOUT_MERGE = "RoundaboutMerge"
    CROSSROAD_TURN_LEFT = "CrossroadTurnLeft"
    OVERTAKE = "Overtake"


# Short names accepted by the CLI and config files, alongside the enum values.
SCENARIO_ALIASES = {
    "empty_town": ScenarioKind.EMPTY_TOWN,
    "single_follow": ScenarioKind.SINGLE_LANE_FOLLOWING,
    "two_lanes_follow": ScenarioKind.TWO_LANES_FOLLOWING,
    "crossroad_merge": ScenarioKind.CROSSROAD_MERGE,
    "roundabout_merge": ScenarioKind.ROUNDABOUT_MERGE,
    "crossroad_turn_left": ScenarioKind.CROSSROAD_TURN_LEFT,
    "overtake": ScenarioKind.OVERTAKE,
}


def parse_scenario_kind(name: str) -> ScenarioKind:
    if name in SCENARIO_ALIASES:
        return SCENARIO_ALIASES[name]
    try:
        return ScenarioKind(name)
    except ValueError:
        raise UnknownScenarioError(f"unknown scenario kind: {name!r}") from None


class DoneReason(str, Enum):
    COLLISION = "Collision"
    GOAL_REACHED = "GoalReached"
    TIMEOUT = "Timeout"
    OFF_ROUTE = "OffRoute"


@dataclass
class VehicleState:
    pose: Pose2D
    speed: float
    acceleration: float = 0.0
    half_length: float = HALF_LENGTH
    half_width: float = HALF_WIDTH

    def __post_init__(self) -> None:
        if self.speed < 0 or self.half_length <= 0 or self.half_width <= 0:
            raise ValueError("invalid vehicle state")

    def copy(self) -> "VehicleState":
        return VehicleState(self.pose.copy(), self.speed, self.acceleration,
                            self.half_length, self.half_width)

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.pose.heading), math.sin(self.pose.heading)
        lx, wy = self.half_length, self.half_width
        local = np.array([[lx, wy], [lx, -wy], [-lx, -wy], [-lx, wy]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.pose.xy


@dataclass
class Lane:
    lane_id: str
    center: Polyline
    width: float = LANE_WIDTH
    legal: bool = True
    left_id: str | None = None
    right_id: str | None = None
    successors: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.width <= 0:
            raise ValueError("lane width must be positive")


@dataclass
class ZombieSpeed:
    mean_kmh: float
    std_kmh: float

    def __post_init__(self) -> None:
        if self.mean_kmh < 0 or self.std_kmh < 0:
            raise ValueError("zombie speeds must be non-negative")


@dataclass
class ScenarioConfig:
    kind: ScenarioKind
    ego_start_kmh: float
    zombies: list[ZombieSpeed]
    seed: int
    max_steps: int = 1000

    def __post_init__(self) -> None:
        if self.ego_start_kmh < 0 or self.max_steps <= 0:
            raise ValueError("invalid scenario config")

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "ego_start_kmh": self.ego_start_kmh,
            "zombies": [{"mean_kmh": z.mean_kmh, "std_kmh": z.std_kmh} for z in self.zombies],
            "seed": self.seed,
            "max_steps": self.max_steps,
        }

    @staticmethod
    def from_json(obj: dict) -> "ScenarioConfig":
        kind = parse_scenario_kind(obj["kind"])
        zombies = [ZombieSpeed(z["mean_kmh"], z["std_kmh"]) for z in obj.get("zombies", [])]
        return ScenarioConfig(kind, float(obj["ego_start_kmh"]), zombies,
                              int(obj["seed"]), int(obj.get("max_steps", 1000)))


def load_scenario_config(path: str) -> ScenarioConfig:
    with open(path) as fh:
        return ScenarioConfig.from_json(json.load(fh))


def default_config(kind: ScenarioKind, seed: int = 0, max_steps: int = 1000) -> ScenarioConfig:
    """Stock per-scenario speeds (km/h); scenarios with several published
    speed variants default to the slowest sub-scenario, one speed for the
    whole traffic stream (mixed speeds on a shared loop would make the
    non-reactive traffic collide with itself)."""
    table = {
        ScenarioKind.EMPTY_TOWN: (25.20, []),
        ScenarioKind.SINGLE_LANE_FOLLOWING: (25.20, [(15.0, 1.0)]),
        ScenarioKind.TWO_LANES_FOLLOWING: (32.40, [(18.0, 1.0)]),
        ScenarioKind.CROSSROAD_MERGE: (25.20, [(21.0, 1.0)]),
        ScenarioKind.ROUNDABOUT_MERGE: (25.20, [(21.0, 1.0)]),
        ScenarioKind.CROSSROAD_TURN_LEFT: (25.20, [(26.0, 1.0)]),
        ScenarioKind.OVERTAKE: (33.48, [(25.0, 1.0), (40.0, 1.0)]),
    }
    ego_kmh, zspecs = table[kind]
    return ScenarioConfig(kind, ego_kmh, [ZombieSpeed(m, s) for m, s in zspecs],
                          seed=seed, max_steps=max_steps)


@dataclass
class Zombie:
    state: VehicleState
    route_ids: list[str]
    target_speed: float       # m/s, drawn once at creation
    route: Polyline           # concatenated route geometry

    def copy(self) -> "Zombie":
        return Zombie(self.state.copy(), list(self.route_ids), self.target_speed, self.route)


@dataclass
class World:
    lanes: dict[str, Lane]
    ego: VehicleState
    zombies: list[Zombie]
    config: ScenarioConfig
    ego_route: list[str]
    goal_lane: str
    goal_s: float
    goal_lat_tol: float
    tick: int = 0
    dt: float = DT
    rng: np.random.Generator | None = None
    done: bool = False
    done_reason: DoneReason | None = None
    _route_poly: Polyline | None = None
    # static route geometry caches shared across copies (lanes never mutate)
    route_views: dict = field(default_factory=dict)

    @property
    def route_polyline(self) -> Polyline:
        if self._route_poly is None:
            self._route_poly = concat_polylines([self.lanes[i].center for i in self.ego_route])
        return self._route_poly

    def copy(self) -> "World":
        w = World(self.lanes, self.ego.copy(), [z.copy() for z in self.zombies],
                  self.config, self.ego_route, self.goal_lane, self.goal_s,
                  self.goal_lat_tol, self.tick, self.dt, self.rng,
                  self.done, self.done_reason, self._route_poly, self.route_views)
        return w

    def mark_off_route(self) -> None:
        self.done = True
        self.done_reason = DoneReason.OFF_ROUTE


def command_accel(lon: float) -> float:
    """Longitudinal command in [-1, 1] -> acceleration; braking reaches
    -6 m/s^2 while throttle tops out at +3 m/s^2, zero command coasts."""
    lon = clamp(lon, -1.0, 1.0)
    return lon * (BRAKE_MAX if lon < 0 else ACCEL_MAX)


def _advance(v: VehicleState, control: ControlAction, dt: float) -> None:
    p = v.pose
    p.x += v.speed * math.cos(p.heading) * dt
    p.y += v.speed * math.sin(p.heading) * dt
    p.heading = wrap_angle(p.heading + v.speed / WHEELBASE * math.tan(control.steer) * dt)
    new_speed = max(0.0, v.speed + command_accel(control.lon) * dt)
    v.acceleration = (new_speed - v.speed) / dt
    v.speed = new_speed


def zombie_control(zombie: VehicleState, route: Polyline, target_speed: float) -> ControlAction:
    """Proportional waypoint follower; past the route end it holds heading and
    coasts."""
    s, _ = route.project(zombie.pose.xy)
    if s >= route.length - 0.5:
        return ControlAction(0.0, 0.0)
    lookahead = route.point_at(s + max(3.0, 0.8 * zombie.speed))
    desired = math.atan2(lookahead[1] - zombie.pose.y, lookahead[0] - zombie.pose.x)
    steer = clamp(1.2 * wrap_angle(desired - zombie.pose.heading), -0.5, 0.5)
    lon = clamp(0.8 * (target_speed - zombie.speed), -1.0, 1.0)
    return ControlAction(steer, lon)


def _rects_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    # Separating-axis test over both rectangles' edge normals.
    for rect_pair in ((a, b), (b, a)):
        edges = np.diff(np.vstack([rect_pair[0], rect_pair[0][:1]]), axis=0)[:2]
        for e in edges:
            axis = np.array([-e[1], e[0]])
            pa = rect_pair[0] @ axis
            pb = rect_pair[1] @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def check_collision(world: World) -> bool:
    """True iff the ego's oriented rectangle overlaps any zombie's."""
    ego_c = world.ego.corners()
    reach = world.ego.half_length + HALF_LENGTH + 1.0
    for z in world.zombies:
        if abs(z.state.pose.x - world.ego.pose.x) > reach + z.state.half_length:
            continue
        if abs(z.state.pose.y - world.ego.pose.y) > reach + z.state.half_length:
            continue
        if _rects_overlap(ego_c, z.state.corners()):
            return True
    return False


def goal_reached(world: World) -> bool:
    """True once the ego is within the goal radius of the route end pose, or
    has passed the goal arc length while laterally within tolerance."""
    lane = world.lanes[world.goal_lane]
    goal_pt = lane.center.point_at(world.goal_s)
    if np.hypot(*(world.ego.pose.xy - goal_pt)) <= GOAL_RADIUS:
        return True
    s, lat = lane.center.project(world.ego.pose.xy)
    return s >= world.goal_s and abs(lat) <= world.goal_lat_tol


def step(world: World, ego_control: ControlAction) -> World:
    """Advance the world by one tick in place (returned for chaining)."""
    if world.done:
        raise EpisodeDoneError(f"cannot step a done world ({world.done_reason})")
    _advance(world.ego, ego_control, world.dt)
    for z in world.zombies:
        _advance(z.state, zombie_control(z.state, z.route, z.target_speed), world.dt)
    world.tick += 1
    if check_collision(world):
        world.done, world.done_reason = True, DoneReason.COLLISION
    elif goal_reached(world):
        world.done, world.done_reason = True, DoneReason.GOAL_REACHED
    elif world.tick >= world.config.max_steps:
        world.done, world.done_reason = True, DoneReason.TIMEOUT
    return world


# --- scenario construction -------------------------------------------------

@dataclass
class _Blueprint:
    lanes: dict[str, Lane]
    ego_pose: Pose2D
    ego_route: list[str]
    goal_lane: str
    goal_s: float
    goal_lat_tol: float
    # (route lane ids, start arc length, start speed m/s)
    zombie_slots: list[tuple[list[str], float, float]]


def _straight(lane_id: str, p0, p1, **kw) -> Lane:
    return Lane(lane_id, Polyline(np.array([p0, p1], dtype=float)), **kw)


def _bp_empty_town() -> _Blueprint:
    pts = np.vstack([
        np.array([[0.0, 0.0], [60.0, 0.0]]),
        arc_points(60.0, 25.0, 25.0, -math.pi / 2, 0.0)[1:],
        np.array([[85.0, 140.0]]),
    ])
    lane = Lane("road", Polyline(pts))
    total = lane.center.length
    return _Blueprint({"road": lane}, Pose2D(5.0, 0.0, 0.0), ["road"],
                      "road", total - 50.0, 0.6 * LANE_WIDTH, [])


def _bp_single_lane() -> _Blueprint:
    lane = _straight("main", (0.0, 0.0), (220.0, 0.0))
    return _Blueprint({"main": lane}, Pose2D(5.0, 0.0, 0.0), ["main"],
                      "main", 95.0, 0.6 * LANE_WIDTH,
                      [(["main"], 30.0, 10.0 * KMH)])


def _bp_two_lanes() -> _Blueprint:
    a = _straight("right", (0.0, 0.0), (260.0, 0.0), left_id="left")
    b = _straight("left", (0.0, LANE_WIDTH), (260.0, LANE_WIDTH), right_id="right")
    return _Blueprint({"right": a, "left": b}, Pose2D(5.0, 0.0, 0.0), ["right"],
                      "right", 115.0, 1.6 * LANE_WIDTH,
                      [(["right"], 35.0, 11.0 * KMH), (["left"], 35.0, 11.0 * KMH)])


def _bp_overtake() -> _Blueprint:
    mid = _straight("mid", (0.0, 0.0), (320.0, 0.0), left_id="fast", right_id="slow")
    fast = _straight("fast", (0.0, LANE_WIDTH), (320.0, LANE_WIDTH), right_id="mid")
    slow = _straight("slow", (0.0, -LANE_WIDTH), (320.0, -LANE_WIDTH), left_id="mid")
    return _Blueprint({"mid": mid, "fast": fast, "slow": slow},
                      Pose2D(5.0, 0.0, 0.0), ["mid"], "mid", 165.0, 0.6 * LANE_WIDTH,
                      [(["mid"], 35.0, 11.0 * KMH), (["fast"], 50.0, 11.0 * KMH)])


def _left_turn_connector() -> Lane:
    # Quarter arc from the eastbound approach end (-8, -1.75) onto the
    # northbound lane at (1.75, 8).
    r = 8.0 + LANE_WIDTH / 2.0
    pts = arc_points(-8.0, 8.0, r, -math.pi / 2, 0.0)
    return Lane("conn_left", Polyline(pts))


def _bp_crossroad_merge() -> _Blueprint:
    half = LANE_WIDTH / 2.0
    approach = _straight("approach", (-80.0, -half), (-8.0, -half),
                         successors=["conn_left", "through_east"])
    conn = _left_turn_connector()
    conn.successors = ["north"]
    north = _straight("north", (half, -70.0), (half, 160.0))
    through = _straight("through_east", (-8.0, -half), (80.0, -half))
    lanes = {l.lane_id: l for l in (approach, conn, north, through)}
    slots = [(["north"], 45.0, 10.0 * KMH),
             (["north"], 27.0, 10.0 * KMH),
             (["north"], 9.0, 10.0 * KMH)]
    return _Blueprint(lanes, Pose2D(-75.0, -half, 0.0),
                      ["approach", "conn_left", "north"],
                      "north", 130.0, 0.6 * LANE_WIDTH, slots)


def _bp_crossroad_turn_left() -> _Blueprint:
    half = LANE_WIDTH / 2.0
    approach = _straight("approach", (-90.0, -half), (-8.0, -half),
                         successors=["conn_left", "through_east"])
    conn = _left_turn_connector()
    conn.successors = ["north"]
    north = _straight("north", (half, -70.0), (half, 160.0))
    through = _straight("through_east", (-8.0, -half), (80.0, -half))
    west_opp = _straight("west_opp", (90.0, half), (-90.0, half), legal=False)
    south_cross = _straight("south_cross", (-half, 160.0), (-half, -70.0), legal=False)
    lanes = {l.lane_id: l for l in (approach, conn, north, through, west_opp, south_cross)}
    slots = [(["south_cross"], 90.0, 10.0 * KMH),
             (["south_cross"], 60.0, 10.0 * KMH),
             (["west_opp"], 35.0, 10.0 * KMH),
             (["west_opp"], 65.0, 10.0 * KMH)]
    return _Blueprint(lanes, Pose2D(-85.0, -half, 0.0),
                      ["approach", "conn_left", "north"],
                      "north", 130.0, 0.6 * LANE_WIDTH, slots)


def _bp_roundabout() -> _Blueprint:
    r = 18.0
    entry = _straight("entry", (r, -50.0), (r, -2.0), successors=["ring_ego"])
    ring_ego = Lane("ring_ego",
                    Polyline(arc_points(0.0, 0.0, r, 0.0, math.radians(165.0))),
                    successors=["exit"])
    # the exit sweeps outward so circulating traffic clears parked/slow cars
    a = math.radians(165.0)
    exit_pts = np.array([
        [r * math.cos(a), r * math.sin(a)],
        [-19.8, -3.0], [-21.5, -8.0], [-22.0, -12.0], [-22.0, -90.0],
    ])
    exit_lane = Lane("exit", Polyline(exit_pts))
    ring_z = Lane("ring_z", Polyline(arc_points(0.0, 0.0, r, -math.pi / 2, 2.5 * math.pi)))
    lanes = {l.lane_id: l for l in (entry, ring_ego, exit_lane, ring_z)}
    circ = ring_z.center.length   # sweeps -90 deg .. 450 deg
    slots = [(["ring_z"], circ * (ang + 90.0) / 540.0, 10.0 * KMH)
             for ang in (-45.0, 15.0, 75.0, 135.0)]
    return _Blueprint(lanes, Pose2D(r, -45.0, math.pi / 2),
                      ["entry", "ring_ego", "exit"],
                      "exit", 40.0, 0.6 * LANE_WIDTH, slots)


_BUILDERS = {
    ScenarioKind.EMPTY_TOWN: _bp_empty_town,
    ScenarioKind.SINGLE_LANE_FOLLOWING: _bp_single_lane,
    ScenarioKind.TWO_LANES_FOLLOWING: _bp_two_lanes,
    ScenarioKind.CROSSROAD_MERGE: _bp_crossroad_merge,
    ScenarioKind.ROUNDABOUT_MERGE: _bp_roundabout,
    ScenarioKind.CROSSROAD_TURN_LEFT: _bp_crossroad_turn_left,
    ScenarioKind.OVERTAKE: _bp_overtake,
}


def create_scenario(config: ScenarioConfig) -> World:
    """Instantiate a world for the configured scenario.

    Zombie target speeds are drawn once (mean + std * z) and start positions
    jittered +-3 m along route, both from the seeded generator, in zombie
    order; nothing else consumes randomness.
    """
    if config.kind not in _BUILDERS:
        raise UnknownScenarioError(f"unknown scenario kind: {config.kind}")
    bp = _BUILDERS[config.kind]()
    rng = np.random.default_rng(config.seed)
    zombies: list[Zombie] = []
    for i, (route_ids, s0, v0) in enumerate(bp.zombie_slots):
        zdef = config.zombies[i % len(config.zombies)] if config.zombies else ZombieSpeed(0.0, 0.0)
        target = max(0.0, (zdef.mean_kmh + zdef.std_kmh * rng.standard_normal()) * KMH)
        s_start = s0 + rng.uniform(-3.0, 3.0)
        route = concat_polylines([bp.lanes[lid].center for lid in route_ids])
        pt = route.point_at(s_start)
        pose = Pose2D(float(pt[0]), float(pt[1]), route.heading_at(s_start))
        zombies.append(Zombie(VehicleState(pose, v0), route_ids, target, route))
    ego = VehicleState(bp.ego_pose.copy(), config.ego_start_kmh * KMH)
    return World(bp.lanes, ego, zombies, config, bp.ego_route,
                 bp.goal_lane, bp.goal_s, bp.goal_lat_tol, rng=rng)
