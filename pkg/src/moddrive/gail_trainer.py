"""Adversarial imitation of low-level controls by a high-level decision
policy.

The discriminator scores (state, control) pairs; its negated log-score is the
reward. Decisions are credited through the deterministic decision-to-control
pipeline: rollouts store both the sampled decision and the control it decoded
to, the discriminator reads the control, and the policy gradient reads the
decision. Policy improvement is a clipped-surrogate update on the factored
categorical heads with generalized advantage estimation and an entropy bonus.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .controller import ControlAction, PidPair, STEER_CAP
from .decision_policy import (Decision, N_LATERAL, N_LOGITS, N_LON,
                              decision_log_prob, policy_forward,
                              sample_decision, split_heads)
from .local_map import (OBS_DIM, OffRouteError, build_local_map,
                        encode_observation, normalize_observation)
from .nets import (AdamState, MlpParams, adam_update, init_mlp, mlp_backward,
                   mlp_forward, sigmoid, softmax)
from .pipeline import PlanFollower, plan_for_decision, replay_control
from .planner import PlannerError
from .world_sim import (ScenarioKind, VehicleState, World, create_scenario,
                        default_config, parse_scenario_kind, step)

log = logging.getLogger("moddrive.train")

HIDDEN = 32
SCORE_CLAMP = 1e-8
EPISODE_STEP_CAP = 200      # demonstration episodes never exceed this
DISC_IN_DIM = OBS_DIM + 2


class NanLossError(RuntimeError):
    pass


# --- records and buffers -------------------------------------------------------

@dataclass
class StepRecord:
    obs: np.ndarray
    decision: Decision | None
    control: ControlAction
    log_prob: float
    reward: float
    value: float
    done: bool
    # replay context: everything needed to recompute `control` from scratch
    ego_state: VehicleState | None = None
    plan_ego: VehicleState | None = None
    plan_lmap: object = None
    pids_before: PidPair | None = None
    t_in_plan: float = 0.0
    fallback: bool = False
    raw_action: np.ndarray | None = None   # pre-clamp sample (end-to-end policy)
    advantage: float = 0.0
    ret: float = 0.0


@dataclass
class TrajectoryBuffer:
    capacity: int
    episodes: list[list[StepRecord]] = field(default_factory=list)

    def add_episode(self, ep: list[StepRecord]) -> None:
        if ep:
            self.episodes.append(ep)

    def full(self) -> bool:
        return self.size() >= self.capacity

    def size(self) -> int:
        return sum(len(e) for e in self.episodes)

    def steps(self) -> list[StepRecord]:
        return [r for e in self.episodes for r in e]


@dataclass
class DemoHeader:
    ep: int
    scenario: ScenarioKind
    seed: int
    source: str


@dataclass
class Demonstration:
    header: DemoHeader
    obs: np.ndarray        # (T, OBS_DIM)
    controls: np.ndarray   # (T, 2): steer, lon
    poses: np.ndarray      # (T, 3): x, y, heading
    speeds: np.ndarray     # (T,)

    def __post_init__(self) -> None:
        if len(self.obs) > EPISODE_STEP_CAP:
            raise ValueError(f"demonstration episode exceeds {EPISODE_STEP_CAP} steps")


def write_demos(path: str, demos: list[Demonstration], append: bool = False) -> None:
    """JSON-lines: one header object per episode followed by one object per
    step; floats round-trip exactly."""
    mode = "a" if append else "w"
    with open(path, mode) as fh:
        for demo in demos:
            h = demo.header
            fh.write(json.dumps({"ep": h.ep, "scenario": h.scenario.value,
                                 "seed": h.seed, "source": h.source}) + "\n")
            for t in range(len(demo.obs)):
                fh.write(json.dumps({
                    "ep": h.ep, "t": t,
                    "obs": list(demo.obs[t]),
                    "steer": float(demo.controls[t, 0]),
                    "lon": float(demo.controls[t, 1]),
                    "x": float(demo.poses[t, 0]),
                    "y": float(demo.poses[t, 1]),
                    "heading": float(demo.poses[t, 2]),
                    "speed": float(demo.speeds[t]),
                }) + "\n")


def load_demos(path: str) -> list[Demonstration]:
    demos: list[Demonstration] = []
    header: DemoHeader | None = None
    rows: list[dict] = []

    def flush() -> None:
        nonlocal rows
        if header is None or not rows:
            rows = []
            return
        demos.append(Demonstration(
            header,
            np.array([r["obs"] for r in rows], dtype=float),
            np.array([[r["steer"], r["lon"]] for r in rows], dtype=float),
            np.array([[r["x"], r["y"], r["heading"]] for r in rows], dtype=float),
            np.array([r["speed"] for r in rows], dtype=float),
        ))
        rows = []

    with open(path) as fh:
        for line in fh:
            obj = json.loads(line)
            if "obs" in obj:
                rows.append(obj)
            else:
                flush()
                header = DemoHeader(int(obj["ep"]), parse_scenario_kind(obj["scenario"]),
                                    int(obj["seed"]), str(obj["source"]))
    flush()
    return demos


# --- discriminator ---------------------------------------------------------------

def disc_input(obs: np.ndarray, controls: np.ndarray) -> np.ndarray:
    """Network input: normalized observation plus steer scaled to [-1, 1] and
    the raw longitudinal command."""
    obs = np.atleast_2d(obs)
    controls = np.atleast_2d(controls)
    return np.concatenate([normalize_observation(obs),
                           controls / np.array([STEER_CAP, 1.0])], axis=1)


def discriminator_scores(params: MlpParams, obs: np.ndarray,
                         controls: np.ndarray) -> np.ndarray:
    logits, _ = mlp_forward(params, disc_input(obs, controls))
    # keep the score strictly inside (0, 1) even where the sigmoid saturates
    return np.clip(sigmoid(logits[:, 0]), 1e-12, 1.0 - 1e-12)


def discriminator_score(params: MlpParams, obs: np.ndarray, u: ControlAction) -> float:
    """Scalar score in (0, 1); trains towards 1 on generated pairs and 0 on
    expert pairs."""
    return float(discriminator_scores(params, obs[None, :],
                                      np.array([[u.steer, u.lon]]))[0])


def reward(score: float) -> float:
    """Imitation reward -log D, strictly positive after clamping."""
    return -float(np.log(np.clip(score, SCORE_CLAMP, 1.0 - SCORE_CLAMP)))


def disc_loss_and_grads(params: MlpParams, x: np.ndarray, labels: np.ndarray):
    """Mean sigmoid cross-entropy and its parameter gradients."""
    z, cache = mlp_forward(params, x)
    z = z[:, 0]
    loss = float(np.mean(np.logaddexp(0.0, z) - labels * z))
    dz = (sigmoid(z) - labels) / len(labels)
    grads, _ = mlp_backward(params, cache, dz[:, None])
    return loss, grads


def discriminator_update(params: MlpParams, adam: AdamState,
                         gen_obs: np.ndarray, gen_u: np.ndarray,
                         exp_obs: np.ndarray, exp_u: np.ndarray,
                         lr: float, rng: np.random.Generator,
                         batch: int = 128) -> tuple[MlpParams, AdamState]:
    """One epoch of balanced minibatches: label 1 for generated pairs, 0 for
    expert pairs, equal counts from each source."""
    if len(exp_obs) == 0:
        raise ValueError("empty demonstration set")
    n = len(gen_obs)
    perm = rng.permutation(n)
    exp_idx = rng.integers(0, len(exp_obs), size=n)
    for start in range(0, n, batch):
        gi = perm[start:start + batch]
        ei = exp_idx[start:start + batch]
        x = np.vstack([disc_input(gen_obs[gi], gen_u[gi]),
                       disc_input(exp_obs[ei], exp_u[ei])])
        y = np.concatenate([np.ones(len(gi)), np.zeros(len(ei))])
        loss, grads = disc_loss_and_grads(params, x, y)
        if not np.isfinite(loss):
            raise NanLossError("discriminator loss is not finite")
        params, adam = adam_update(params, grads, adam, lr)
    return params, adam


# --- advantages -----------------------------------------------------------------

def compute_advantages(rewards, values, dones, gamma: float, lam: float,
                       normalize: bool = True):
    """Generalized advantage estimation over a flat batch with episode
    boundaries marked by `dones`; returns (advantages, returns) where
    returns = raw advantages + values."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    adv = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 0.0 if dones[t] else 1.0
        next_value = values[t + 1] if (t + 1 < n and not dones[t]) else 0.0
        delta = rewards[t] + gamma * next_value - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    returns = adv + values
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


# --- policy update --------------------------------------------------------------

def _head_probs(logits: np.ndarray):
    a, b, c = split_heads(logits)
    return softmax(a), softmax(b), softmax(c)


def policy_loss_and_grads(params: MlpParams, xs: np.ndarray,
                          decisions: np.ndarray, old_logp: np.ndarray,
                          adv: np.ndarray, clip: float, ent_weight: float):
    """Clipped-surrogate loss (maximization written as a minimized negative)
    with an entropy bonus; inputs are pre-normalized observations and an
    (n, 3) integer decision matrix."""
    n = len(xs)
    logits, cache = mlp_forward(params, xs)
    pa, pb, pc = _head_probs(logits)
    rows = np.arange(n)
    idx = (decisions[:, 0], decisions[:, 1], decisions[:, 2])
    eps = 1e-12
    logp = (np.log(np.maximum(pa[rows, idx[0]], eps))
            + np.log(np.maximum(pb[rows, idx[1]], eps))
            + np.log(np.maximum(pc[rows, idx[2]], eps)))
    ratio = np.exp(logp - old_logp)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    surrogate = np.minimum(surr1, surr2)

    def head_entropy(p):
        return -np.sum(p * np.log(np.maximum(p, eps)), axis=1)

    ent = head_entropy(pa) + head_entropy(pb) + head_entropy(pc)
    loss = float(-surrogate.mean() - ent_weight * ent.mean())

    # d(loss)/d(logp): zero where the clipped branch is active
    g_surr = np.where(surr1 <= surr2, ratio * adv, 0.0) / n
    grad_logits = np.zeros_like(logits)
    for p, sel, sl in ((pa, idx[0], slice(0, N_LATERAL)),
                       (pb, idx[1], slice(N_LATERAL, N_LATERAL + N_LON)),
                       (pc, idx[2], slice(N_LATERAL + N_LON, N_LOGITS))):
        onehot = np.zeros_like(p)
        onehot[rows, sel] = 1.0
        h = head_entropy(p)
        dlogp = onehot - p
        dent = -p * (np.log(np.maximum(p, eps)) + h[:, None])
        grad_logits[:, sl] = -g_surr[:, None] * dlogp - (ent_weight / n) * dent
    grads, _ = mlp_backward(params, cache, grad_logits)
    return loss, grads


def value_loss_and_grads(params: MlpParams, xs: np.ndarray, returns: np.ndarray):
    v, cache = mlp_forward(params, xs)
    err = v[:, 0] - returns
    loss = float(np.mean(err**2))
    grads, _ = mlp_backward(params, cache, (2.0 * err / len(err))[:, None])
    return loss, grads


def policy_update(params: MlpParams, adam: AdamState, xs: np.ndarray,
                  decisions: np.ndarray, old_logp: np.ndarray, adv: np.ndarray,
                  epochs: int, clip: float, lr: float, ent_weight: float,
                  rng: np.random.Generator, minibatch: int = 128):
    """Several epochs of shuffled minibatch ascent on the clipped surrogate."""
    n = len(xs)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, minibatch):
            mb = perm[start:start + minibatch]
            loss, grads = policy_loss_and_grads(params, xs[mb], decisions[mb],
                                                old_logp[mb], adv[mb], clip, ent_weight)
            if not np.isfinite(loss):
                raise NanLossError("policy loss is not finite")
            params, adam = adam_update(params, grads, adam, lr)
    return params, adam


def value_update(params: MlpParams, adam: AdamState, xs: np.ndarray,
                 returns: np.ndarray, epochs: int, lr: float,
                 rng: np.random.Generator, minibatch: int = 128):
    n = len(xs)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, minibatch):
            mb = perm[start:start + minibatch]
            loss, grads = value_loss_and_grads(params, xs[mb], returns[mb])
            if not np.isfinite(loss):
                raise NanLossError("value loss is not finite")
            params, adam = adam_update(params, grads, adam, lr)
    return params, adam


# --- rollouts -------------------------------------------------------------------

def value_of(value_params: MlpParams, obs: np.ndarray) -> float:
    y, _ = mlp_forward(value_params, normalize_observation(obs))
    return float(y[0])


def generate_traj(world: World, policy_params: MlpParams,
                  value_params: MlpParams, rng: np.random.Generator,
                  horizon: int = 1000,
                  follower: PlanFollower | None = None) -> list[StepRecord]:
    """Roll one episode: sample a decision at decision ticks, hold the plan in
    between, query the controller every tick, and record the (state, decision,
    control) pairing along with its replay context."""
    follower = follower if follower is not None else PlanFollower()
    follower.reset()
    records: list[StepRecord] = []
    while not world.done and len(records) < horizon:
        try:
            lmap = build_local_map(world)
        except OffRouteError:
            world.mark_off_route()
            break
        obs = encode_observation(lmap)
        dist = policy_forward(policy_params, obs)
        if follower.needs_decision(world.tick, world.dt):
            d = sample_decision(dist, rng)
            try:
                follower.adopt(plan_for_decision(lmap, world.ego, d, world.tick))
            except PlannerError:
                world.mark_off_route()
                break
        plan = follower.plan
        rec = StepRecord(
            obs=obs, decision=plan.decision, control=None,  # type: ignore[arg-type]
            log_prob=decision_log_prob(dist, plan.decision),
            reward=0.0, value=value_of(value_params, obs), done=False,
            ego_state=world.ego.copy(), plan_ego=plan.plan_ego,
            plan_lmap=plan.lmap, t_in_plan=(world.tick - plan.plan_tick) * world.dt,
            fallback=plan.fallback,
        )
        action, pids_before, _ = follower.control(world)
        rec.control = action
        rec.pids_before = pids_before
        step(world, action)
        rec.done = world.done
        records.append(rec)
    if records:
        records[-1].done = True
    return records


def replay_step_record(rec: StepRecord, dt: float = 0.1) -> ControlAction:
    """Recompute the stored control through the full pipeline."""
    return replay_control(rec.plan_ego, rec.plan_lmap, rec.decision,
                          rec.ego_state, rec.pids_before, rec.t_in_plan, dt)


# --- trainer --------------------------------------------------------------------

@dataclass
class TrainerCfg:
    iterations: int = 500
    batch_size: int = 512
    lr: float = 3e-4
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    epochs: int = 4
    minibatch: int = 128
    entropy_weight: float = 0.1
    horizon: int = 1000
    n_workers: int = 4


@dataclass
class WorkerSlot:
    scenario: ScenarioKind
    demos: list[Demonstration]
    follower: PlanFollower


@dataclass
class TrainerState:
    cfg: TrainerCfg
    policy: MlpParams
    value: MlpParams
    disc: MlpParams
    adam_policy: AdamState
    adam_value: AdamState
    adam_disc: AdamState
    workers: list[WorkerSlot]
    exp_obs: np.ndarray
    exp_u: np.ndarray
    rng: np.random.Generator
    iteration: int = 0
    next_worker: int = 0
    last_assignments: list[str] = field(default_factory=list)


def make_trainer(demos: list[Demonstration], cfg: TrainerCfg,
                 seed: int) -> TrainerState:
    """Build networks, workers, and the stacked expert pairs.

    Workers are logical rollout slots assigned round-robin over the distinct
    demo scenarios; each owns its world and PID state, and all of them read
    the same parameter snapshot within an iteration.
    """
    if not demos:
        raise ValueError("no demonstrations")
    rng = np.random.default_rng(seed)
    scenarios: list[ScenarioKind] = []
    for d in demos:
        if d.header.scenario not in scenarios:
            scenarios.append(d.header.scenario)
    workers = []
    for i in range(max(cfg.n_workers, len(scenarios))):
        kind = scenarios[i % len(scenarios)]
        workers.append(WorkerSlot(kind, [d for d in demos if d.header.scenario == kind],
                                  PlanFollower()))
    log.info("workers: %s", [w.scenario.value for w in workers])
    policy = init_mlp([OBS_DIM, HIDDEN, HIDDEN, N_LOGITS], rng, final_scale=0.01)
    value = init_mlp([OBS_DIM, HIDDEN, HIDDEN, 1], rng)
    disc = init_mlp([DISC_IN_DIM, HIDDEN, HIDDEN, 1], rng, final_scale=0.01)
    exp_obs = np.vstack([d.obs for d in demos])
    exp_u = np.vstack([d.controls for d in demos])
    return TrainerState(cfg, policy, value, disc,
                        AdamState.for_arrays(policy.arrays()),
                        AdamState.for_arrays(value.arrays()),
                        AdamState.for_arrays(disc.arrays()),
                        workers, exp_obs, exp_u, rng)


def rollout_world(state: TrainerState, worker: WorkerSlot) -> World:
    """Fresh world seeded from a sampled expert episode's scenario seed."""
    demo = worker.demos[int(state.rng.integers(len(worker.demos)))]
    return create_scenario(default_config(demo.header.scenario, seed=demo.header.seed))


def train_iteration(state: TrainerState) -> TrainerState:
    """One adversarial iteration: fill the buffer from expert-seeded rollouts,
    reward with the current discriminator, then update discriminator, policy,
    and value function."""
    cfg = state.cfg
    buffer = TrajectoryBuffer(cfg.batch_size)
    assignments: list[str] = []
    while not buffer.full():
        worker = state.workers[state.next_worker]
        state.next_worker = (state.next_worker + 1) % len(state.workers)
        world = rollout_world(state, worker)
        episode = generate_traj(world, state.policy, state.value, state.rng,
                                horizon=cfg.horizon, follower=worker.follower)
        buffer.add_episode(episode)
        assignments.append(worker.scenario.value)
    state.last_assignments = assignments

    records = buffer.steps()
    obs = np.array([r.obs for r in records])
    controls = np.array([[r.control.steer, r.control.lon] for r in records])
    scores = discriminator_scores(state.disc, obs, controls)
    for rec, s in zip(records, scores):
        rec.reward = reward(float(s))

    rewards = np.array([r.reward for r in records])
    values = np.array([r.value for r in records])
    dones = np.array([r.done for r in records])
    adv, returns = compute_advantages(rewards, values, dones, cfg.gamma, cfg.lam)
    for rec, a, ret in zip(records, adv, returns):
        rec.advantage, rec.ret = float(a), float(ret)

    state.disc, state.adam_disc = discriminator_update(
        state.disc, state.adam_disc, obs, controls, state.exp_obs, state.exp_u,
        cfg.lr, state.rng)

    xs = normalize_observation(obs)
    decisions = np.array([r.decision.as_tuple() for r in records])
    old_logp = np.array([r.log_prob for r in records])
    state.policy, state.adam_policy = policy_update(
        state.policy, state.adam_policy, xs, decisions, old_logp, adv,
        cfg.epochs, cfg.clip, cfg.lr, cfg.entropy_weight, state.rng, cfg.minibatch)
    state.value, state.adam_value = value_update(
        state.value, state.adam_value, xs, returns, cfg.epochs, cfg.lr,
        state.rng, cfg.minibatch)

    state.iteration += 1
    if state.iteration % 50 == 0:
        log.info("iter %d: buffer=%d, mean reward=%.3f, mean score=%.3f",
                 state.iteration, len(records), rewards.mean(), scores.mean())
    return state
