"""Evaluation metrics, seeded evaluation runs, run configuration, and the
single-learner training loop shared by per-scenario and multi-scenario runs."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .baselines import (BcAgent, E2eAgent, GaussianPolicy, RuleBasedAgent,
                        ScriptedExpertAgent)
from .controller import (DEFAULT_LAT_GAINS, DEFAULT_LON_GAINS, ControlAction)
from .decision_policy import load_mlp, save_mlp
from .gail_trainer import (Demonstration, TrainerCfg, load_demos, make_trainer,
                           train_iteration)
from .local_map import OffRouteError
from .pipeline import ModularPolicyAgent, PlanFollower
from .world_sim import (DoneReason, ScenarioKind, World, create_scenario,
                        default_config, parse_scenario_kind, step)

log = logging.getLogger("moddrive.harness")


@dataclass
class EpisodeTrace:
    speeds: np.ndarray           # tick-aligned, length steps + 1
    steps: int
    dt: float
    done_reason: DoneReason | None
    controls: np.ndarray | None = None
    poses: np.ndarray | None = None

    @property
    def collided(self) -> bool:
        return self.done_reason == DoneReason.COLLISION


@dataclass
class EpisodeMetrics:
    time_s: float
    mean_abs_accel: float
    mean_abs_jerk: float
    collided: bool


def run_episode(agent, world: World, record: bool = False) -> EpisodeTrace:
    """Drive one agent until the episode ends; records the speed trace (and
    optionally controls/poses)."""
    speeds = [world.ego.speed]
    controls = []
    poses = []
    while not world.done:
        try:
            action = agent.act(world)
        except OffRouteError:
            world.mark_off_route()
            break
        if record:
            controls.append([action.steer, action.lon])
            poses.append([world.ego.pose.x, world.ego.pose.y, world.ego.pose.heading])
        step(world, action)
        speeds.append(world.ego.speed)
    return EpisodeTrace(np.array(speeds), world.tick, world.dt, world.done_reason,
                        np.array(controls) if record else None,
                        np.array(poses) if record else None)


def compute_metrics(trace: EpisodeTrace) -> EpisodeMetrics:
    """Finite-difference comfort metrics from the recorded speed trace."""
    if trace.steps < 3:
        raise ValueError("episode too short for metrics (need >= 3 steps)")
    accel = np.diff(trace.speeds) / trace.dt
    jerk = np.diff(accel) / trace.dt
    return EpisodeMetrics(trace.steps * trace.dt,
                          float(np.mean(np.abs(accel))),
                          float(np.mean(np.abs(jerk))),
                          trace.collided)


@dataclass
class Metrics:
    collision_rate: float
    time_mean: float
    time_std: float
    accel_mean: float
    accel_std: float
    jerk_mean: float
    jerk_std: float
    episodes: int

    def to_json(self) -> dict:
        return {
            "collision_rate": self.collision_rate,
            "time_taken_s": {"mean": self.time_mean, "std": self.time_std},
            "accel_m_s2": {"mean": self.accel_mean, "std": self.accel_std},
            "jerk_m_s3": {"mean": self.jerk_mean, "std": self.jerk_std},
            "episodes": self.episodes,
        }


def aggregate(per_episode: list[EpisodeMetrics]) -> Metrics:
    times = np.array([m.time_s for m in per_episode])
    accels = np.array([m.mean_abs_accel for m in per_episode])
    jerks = np.array([m.mean_abs_jerk for m in per_episode])
    ncoll = sum(m.collided for m in per_episode)
    return Metrics(ncoll / len(per_episode),
                   float(times.mean()), float(times.std()),
                   float(accels.mean()), float(accels.std()),
                   float(jerks.mean()), float(jerks.std()),
                   len(per_episode))


def perturb_start(world: World, rng: np.random.Generator, amount: float) -> None:
    """Shift the ego start pose laterally by up to +-amount meters."""
    offset = rng.uniform(-amount, amount)
    h = world.ego.pose.heading
    world.ego.pose.x += -np.sin(h) * offset
    world.ego.pose.y += np.cos(h) * offset


def run_evaluation(agent, kind: ScenarioKind, episodes: int = 100,
                   base_seed: int = 0, perturb: float = 0.0,
                   max_steps: int = 1000) -> Metrics:
    """Evaluate one agent over `episodes` distinct seeds; fully deterministic
    given (agent parameters, kind, episodes, base_seed, perturb)."""
    per_episode = []
    for i in range(episodes):
        cfg = default_config(kind, seed=base_seed + i, max_steps=max_steps)
        world = create_scenario(cfg)
        if perturb > 0.0:
            perturb_start(world, np.random.default_rng(10_000_019 + base_seed + i), perturb)
        agent.reset(world)
        per_episode.append(compute_metrics(run_episode(agent, world)))
    return aggregate(per_episode)


# --- run configuration -----------------------------------------------------------

@dataclass
class RunConfig:
    scenarios: list[str]
    iterations: int = 500
    batch_size: int = 512
    lr: float = 3e-4
    entropy_weight: float = 0.1
    seed: int = 0
    pid_lat: tuple[float, float, float] | None = None
    pid_lon: tuple[float, float, float] | None = None
    demos_path: str = "demos.jsonl"
    out_dir: str = "runs"
    eval_episodes: int = 100
    eval_scenarios: list[str] = field(default_factory=list)
    n_workers: int = 4
    horizon: int = 1000

    def __post_init__(self) -> None:
        if self.iterations <= 0 or self.batch_size <= 0:
            raise ValueError("iterations and batch size must be positive")

    @staticmethod
    def from_json(obj: dict) -> "RunConfig":
        known = {f for f in RunConfig.__dataclass_fields__}
        kwargs = {k: v for k, v in obj.items() if k in known}
        for key in ("pid_lat", "pid_lon"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(float(x) for x in kwargs[key])
        return RunConfig(**kwargs)


def load_run_config(path: str) -> RunConfig:
    with open(path) as fh:
        return RunConfig.from_json(json.load(fh))


def trainer_cfg_from(config: RunConfig) -> TrainerCfg:
    return TrainerCfg(iterations=config.iterations, batch_size=config.batch_size,
                      lr=config.lr, entropy_weight=config.entropy_weight,
                      horizon=config.horizon, n_workers=config.n_workers)


def distill_run(config: RunConfig, demos: list[Demonstration] | None = None,
                progress_every: int = 0) -> dict:
    """Train one policy on every configured scenario with a single learner;
    rollout workers are assigned round-robin across scenarios. A run with one
    scenario IS the plain training run, so the two cannot diverge.

    Returns checkpoint paths and per-scenario evaluation metrics (including
    held-out scenarios listed in `eval_scenarios`).
    """
    kinds = [parse_scenario_kind(s) for s in config.scenarios]
    if demos is None:
        demos = load_demos(config.demos_path)
    demos = [d for d in demos if d.header.scenario in kinds]
    if not demos:
        raise ValueError("no demonstrations for the configured scenarios")
    state = make_trainer(demos, trainer_cfg_from(config), config.seed)
    if config.pid_lat or config.pid_lon:
        for w in state.workers:
            w.follower = PlanFollower(config.pid_lat or DEFAULT_LAT_GAINS,
                                      config.pid_lon or DEFAULT_LON_GAINS)
    for i in range(config.iterations):
        train_iteration(state)
        if progress_every and (i + 1) % progress_every == 0:
            log.info("distill %s: iteration %d/%d", config.scenarios, i + 1,
                     config.iterations)
    os.makedirs(config.out_dir, exist_ok=True)
    paths = {name: os.path.join(config.out_dir, f"{name}.mdpo")
             for name in ("policy", "value", "disc")}
    save_mlp(paths["policy"], state.policy)
    save_mlp(paths["value"], state.value)
    save_mlp(paths["disc"], state.disc)

    report: dict[str, dict] = {}
    for name in config.scenarios + config.eval_scenarios:
        kind = parse_scenario_kind(name)
        agent = ModularPolicyAgent(state.policy)
        metrics = run_evaluation(agent, kind, config.eval_episodes, config.seed)
        report[name] = metrics.to_json()
    return {"checkpoints": paths, "metrics": report,
            "worker_scenarios": [w.scenario.value for w in state.workers]}


def train_run(config: RunConfig, demos: list[Demonstration] | None = None,
              progress_every: int = 0) -> dict:
    """Single-scenario training entry point; identical code path to
    :func:`distill_run` by construction."""
    return distill_run(config, demos, progress_every)


def e2e_train_run(config: RunConfig, demos: list[Demonstration] | None = None,
                  progress_every: int = 0) -> dict:
    """Adversarial training of the end-to-end Gaussian control policy with the
    same loop shape; checkpoint is the mean network plus a log-std sidecar."""
    from .baselines import E2eAgent, e2e_train_iteration, make_e2e_trainer
    kinds = [parse_scenario_kind(s) for s in config.scenarios]
    if demos is None:
        demos = load_demos(config.demos_path)
    demos = [d for d in demos if d.header.scenario in kinds]
    if not demos:
        raise ValueError("no demonstrations for the configured scenarios")
    state = make_e2e_trainer(demos, trainer_cfg_from(config), config.seed)
    for i in range(config.iterations):
        e2e_train_iteration(state)
        if progress_every and (i + 1) % progress_every == 0:
            log.info("e2e %s: iteration %d/%d", config.scenarios, i + 1, config.iterations)
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, "e2e_policy.mdpo")
    save_mlp(path, state.policy.mlp)
    with open(path + ".logstd.json", "w") as fh:
        json.dump(list(state.policy.log_std), fh)
    report = {}
    for name in config.scenarios + config.eval_scenarios:
        metrics = run_evaluation(E2eAgent(state.policy), parse_scenario_kind(name),
                                 config.eval_episodes, config.seed)
        report[name] = metrics.to_json()
    return {"checkpoints": {"policy": path}, "metrics": report}


def bc_train_run(config: RunConfig, demos: list[Demonstration] | None = None,
                 epochs: int = 300) -> dict:
    """Supervised behavior-cloning baseline on the configured demos."""
    from .baselines import bc_train
    kinds = [parse_scenario_kind(s) for s in config.scenarios]
    if demos is None:
        demos = load_demos(config.demos_path)
    demos = [d for d in demos if d.header.scenario in kinds]
    if not demos:
        raise ValueError("no demonstrations for the configured scenarios")
    params, losses = bc_train(demos, np.random.default_rng(config.seed), epochs=epochs)
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, "bc.mdpo")
    save_mlp(path, params)
    report = {}
    for name in config.scenarios:
        metrics = run_evaluation(BcAgent(params), parse_scenario_kind(name),
                                 config.eval_episodes, config.seed)
        report[name] = metrics.to_json()
    return {"checkpoints": {"policy": path}, "metrics": report,
            "final_loss": losses[-1]}


def make_agent(name: str, checkpoint: str | None = None, seed: int | None = None):
    """Agent factory used by the CLI: rule | expert | policy | bc | e2e."""
    if name == "rule":
        return RuleBasedAgent()
    if name == "expert":
        return ScriptedExpertAgent()
    if checkpoint is None:
        raise ValueError(f"agent {name!r} needs a checkpoint")
    if name == "policy":
        return ModularPolicyAgent(load_mlp(checkpoint), seed=seed)
    if name == "bc":
        return BcAgent(load_mlp(checkpoint))
    if name == "e2e":
        mlp = load_mlp(checkpoint)
        log_std_path = checkpoint + ".logstd.json"
        log_std = np.array(json.load(open(log_std_path))) if os.path.exists(log_std_path) \
            else np.log([0.15, 0.3])
        return E2eAgent(GaussianPolicy(mlp, log_std))
    raise ValueError(f"unknown agent {name!r}")


def replay_demo_episode(demos: list[Demonstration], index: int) -> dict:
    """Re-run a recorded episode's controls through a fresh seeded world and
    report the maximum pose deviation (zero for an untampered file)."""
    demo = demos[index]
    world = create_scenario(default_config(demo.header.scenario, seed=demo.header.seed))
    max_err = 0.0
    for t in range(len(demo.controls)):
        expect = demo.poses[t]
        err = max(abs(world.ego.pose.x - expect[0]), abs(world.ego.pose.y - expect[1]),
                  abs(world.ego.pose.heading - expect[2]))
        max_err = max(max_err, err)
        if world.done:
            break
        step(world, ControlAction(float(demo.controls[t, 0]), float(demo.controls[t, 1])))
    return {"episode": index, "steps": len(demo.controls), "max_pose_error": max_err}
