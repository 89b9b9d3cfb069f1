"""Dual-PID trajectory tracking: lateral PID on steering, longitudinal PID on
throttle/brake, both hard-capped."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, NamedTuple

from .geometry import wrap_angle

if TYPE_CHECKING:  # pragma: no cover
    from .planner import PlannedTrajectory
    from .world_sim import VehicleState

STEER_CAP = 0.5
LON_CAP = 1.0

# Heading error contributes to the lateral error with this weight; pure
# cross-track PID oscillates on the bicycle model.
HEADING_BLEND = 0.5

DEFAULT_LAT_GAINS = (0.8, 0.0, 0.2)
DEFAULT_LON_GAINS = (0.5, 0.05, 0.0)

_EPS = 1e-9


def clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


@dataclass(frozen=True)
class ControlAction:
    """Low-level command: steer in [-0.5, 0.5] rad, longitudinal in [-1, 1]
    (negative brakes)."""

    steer: float
    lon: float

    def __post_init__(self) -> None:
        if abs(self.steer) > STEER_CAP + 1e-9 or abs(self.lon) > LON_CAP + 1e-9:
            raise ValueError(f"control outside caps: steer={self.steer}, lon={self.lon}")

    @staticmethod
    def clamped(steer: float, lon: float) -> "ControlAction":
        return ControlAction(clamp(steer, -STEER_CAP, STEER_CAP), clamp(lon, -LON_CAP, LON_CAP))


@dataclass(frozen=True)
class PidState:
    """Discrete-time PID gains plus accumulated state. Output magnitude never
    exceeds `cap`; the integral is clamped to +-cap/max(ki, eps) to prevent
    windup lock."""

    kp: float
    ki: float
    kd: float
    cap: float
    integral: float = 0.0
    prev_error: float = 0.0


class PidPair(NamedTuple):
    lat: PidState
    lon: PidState


def fresh_pids(lat_gains=DEFAULT_LAT_GAINS, lon_gains=DEFAULT_LON_GAINS) -> PidPair:
    return PidPair(
        lat=PidState(*lat_gains, cap=STEER_CAP),
        lon=PidState(*lon_gains, cap=LON_CAP),
    )


def pid_step(state: PidState, error: float, dt: float) -> tuple[float, PidState]:
    """One controller tick; returns (capped output, updated state)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    i_cap = state.cap / max(state.ki, _EPS)
    integral = clamp(state.integral + error * dt, -i_cap, i_cap)
    derivative = (error - state.prev_error) / dt
    out = clamp(state.kp * error + state.ki * integral + state.kd * derivative,
                -state.cap, state.cap)
    return out, replace(state, integral=integral, prev_error=error)


def lateral_error(ego: "VehicleState", ref_point, ref_heading: float) -> float:
    """Signed cross-track distance to the reference point plus a weighted
    heading error; positive when the reference lies to the left."""
    dx = ref_point[0] - ego.pose.x
    dy = ref_point[1] - ego.pose.y
    c, s = math.cos(ego.pose.heading), math.sin(ego.pose.heading)
    cross_track = -s * dx + c * dy
    return cross_track + HEADING_BLEND * wrap_angle(ref_heading - ego.pose.heading)


def longitudinal_error(ego: "VehicleState", ref_speed: float) -> float:
    return ref_speed - ego.speed


def track(traj: "PlannedTrajectory", ego: "VehicleState", pids: PidPair,
          t: float, dt: float = 0.1) -> tuple[ControlAction, PidPair]:
    """Track the planned trajectory at plan-relative time `t`.

    Past the horizon the last reference is held. Deterministic: identical
    (traj, ego, pids, t) give a bit-identical action.
    """
    point, heading, speed = traj.sample(min(max(t, 0.0), traj.horizon))
    steer, lat = pid_step(pids.lat, lateral_error(ego, point, heading), dt)
    lon, lon_state = pid_step(pids.lon, longitudinal_error(ego, speed), dt)
    return ControlAction(steer, lon), PidPair(lat, lon_state)
