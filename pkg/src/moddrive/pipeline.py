"""Glue between decisions and controls: decode a decision against the local
map, plan a trajectory, and track it with the dual PID.

This composition is the contract every learning component relies on: it is a
pure function of (vehicle state, PID state, local map, decision, time), so a
recorded control can always be reproduced bit-for-bit from its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controller import (DEFAULT_LAT_GAINS, DEFAULT_LON_GAINS, ControlAction,
                         PidPair, fresh_pids, track)
from .decision_policy import (CHANGE_LEFT, CHANGE_RIGHT, KEEP_LANE, Decision,
                              GoalState, argmax_decision, decode_decision,
                              policy_forward, sample_decision)
from .local_map import LocalMap, build_local_map, encode_observation
from .nets import MlpParams
from .planner import PlannedTrajectory, PlannerError, cap_goal, make_trajectory
from .world_sim import VehicleState, World

DECISION_PERIOD = 10    # control ticks between replans (1.0 s at dt=0.1)

FALLBACK_DECISION = Decision(KEEP_LANE, 0, 0)


@dataclass
class ActivePlan:
    traj: PlannedTrajectory
    goal: GoalState
    decision: Decision
    plan_tick: int
    plan_ego: VehicleState     # ego snapshot the plan was built from
    lmap: LocalMap             # map snapshot the decision was decoded against
    fallback: bool = False


def _route_for(decision: Decision, lmap: LocalMap):
    side = {CHANGE_LEFT: "left", CHANGE_RIGHT: "right"}.get(decision.lateral)
    route = lmap.routes.get(side) if side else None
    return route if route is not None else lmap.routes["keep"]


def plan_for_decision(lmap: LocalMap, ego: VehicleState, decision: Decision,
                      tick: int) -> ActivePlan:
    """Decode, apply traffic goal rejection, and plan. An infeasible plan
    falls back to the keep-lane/slow decision and is flagged."""
    for candidate, is_fallback in ((decision, False), (FALLBACK_DECISION, True)):
        route = _route_for(candidate, lmap)
        goal = cap_goal(decode_decision(candidate, lmap), lmap, ego.speed,
                        route=route.poly, route_start=route.start_s)
        try:
            traj = make_trajectory(ego.pose, ego.speed, ego.acceleration, goal)
        except PlannerError:
            if is_fallback:
                raise
            continue
        return ActivePlan(traj, goal, candidate, tick, ego.copy(), lmap, is_fallback)
    raise PlannerError("unreachable")  # pragma: no cover


def replay_control(plan_ego: VehicleState, lmap: LocalMap, decision: Decision,
                   ego_now: VehicleState, pids: PidPair, t_in_plan: float,
                   dt: float) -> ControlAction:
    """Recompute the control for a recorded step from scratch; used to verify
    that stored (decision, control) pairs really are linked by the pipeline."""
    plan = plan_for_decision(lmap, plan_ego, decision, tick=0)
    action, _ = track(plan.traj, ego_now, pids, t_in_plan, dt)
    return action


class PlanFollower:
    """Per-episode plan and PID state; one instance per rollout worker."""

    def __init__(self, lat_gains=DEFAULT_LAT_GAINS, lon_gains=DEFAULT_LON_GAINS) -> None:
        self._lat = tuple(lat_gains)
        self._lon = tuple(lon_gains)
        self.pids = fresh_pids(self._lat, self._lon)
        self.plan: ActivePlan | None = None

    def reset(self) -> None:
        self.pids = fresh_pids(self._lat, self._lon)
        self.plan = None

    def needs_decision(self, tick: int, dt: float) -> bool:
        if self.plan is None:
            return True
        age = tick - self.plan.plan_tick
        return age >= DECISION_PERIOD or age * dt >= self.plan.traj.horizon

    def adopt(self, plan: ActivePlan) -> None:
        self.plan = plan

    def control(self, world: World) -> tuple[ControlAction, PidPair, float]:
        """Returns (action, pid state before the call, plan-relative time)."""
        assert self.plan is not None, "no active plan"
        t_in_plan = (world.tick - self.plan.plan_tick) * world.dt
        pids_before = self.pids
        action, self.pids = track(self.plan.traj, world.ego, self.pids,
                                  t_in_plan, world.dt)
        return action, pids_before, t_in_plan


class ModularPolicyAgent:
    """Evaluation wrapper: trained decision heads over the planner/controller
    stack. Greedy head selection by default; mode="sample" draws seeded
    decisions instead."""

    def __init__(self, params: MlpParams, mode: str = "greedy",
                 seed: int | None = None) -> None:
        if mode not in ("greedy", "sample"):
            raise ValueError("mode must be 'greedy' or 'sample'")
        self.params = params
        self.mode = mode
        self._seed = seed
        self._rng = None
        self.follower = PlanFollower()

    def reset(self, world: World) -> None:
        self.follower.reset()
        self._rng = np.random.default_rng(
            (self._seed if self._seed is not None else 0) + world.config.seed)

    def act(self, world: World) -> ControlAction:
        lmap = build_local_map(world)
        if self.follower.needs_decision(world.tick, world.dt):
            dist = policy_forward(self.params, encode_observation(lmap))
            d = (argmax_decision(dist) if self.mode == "greedy"
                 else sample_decision(dist, self._rng))
            self.follower.adopt(plan_for_decision(lmap, world.ego, d, world.tick))
        action, _, _ = self.follower.control(world)
        return action
