"""Factored categorical decision space, its grounding into planner goal
states, and the policy head operations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .local_map import LocalMap, normalize_observation
from .nets import MlpParams, mlp_forward, softmax

CHANGE_LEFT, KEEP_LANE, CHANGE_RIGHT = 0, 1, 2

N_LATERAL, N_LON, N_SPEED = 3, 4, 4
N_LOGITS = N_LATERAL + N_LON + N_SPEED

LON_INTERVAL = 10.0    # meters per longitudinal bin
PROB_FLOOR = 1e-12

HIDDEN = 32


@dataclass(frozen=True)
class Decision:
    lateral: int
    lon_bin: int
    speed_bin: int

    def __post_init__(self) -> None:
        if not (0 <= self.lateral < N_LATERAL and 0 <= self.lon_bin < N_LON
                and 0 <= self.speed_bin < N_SPEED):
            raise ValueError(f"decision out of range: {self}")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.lateral, self.lon_bin, self.speed_bin)


def all_decisions() -> list[Decision]:
    return [Decision(a, b, c)
            for a in range(N_LATERAL) for b in range(N_LON) for c in range(N_SPEED)]


@dataclass
class GoalState:
    point: np.ndarray      # world coords, on the target lane centerline
    heading: float         # lane tangent at the target
    speed: float           # m/s


@dataclass
class PolicyDistribution:
    lateral: np.ndarray    # (3,)
    lon: np.ndarray        # (4,)
    speed: np.ndarray      # (4,)

    def heads(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.lateral, self.lon, self.speed


def split_heads(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (logits[..., :N_LATERAL],
            logits[..., N_LATERAL:N_LATERAL + N_LON],
            logits[..., N_LATERAL + N_LON:])


def distribution_from_logits(logits: np.ndarray) -> PolicyDistribution:
    a, b, c = split_heads(np.asarray(logits, dtype=float))
    return PolicyDistribution(softmax(a), softmax(b), softmax(c))


def policy_forward(params: MlpParams, obs: np.ndarray) -> PolicyDistribution:
    """Per-head softmax over the 3+4+4 logits of the decision network."""
    logits, _ = mlp_forward(params, normalize_observation(obs))
    if logits.shape[-1] != N_LOGITS:
        raise ValueError(f"policy net must emit {N_LOGITS} logits")
    return distribution_from_logits(logits)


def sample_decision(dist: PolicyDistribution, rng: np.random.Generator) -> Decision:
    """Independent categorical draw per head (lateral, lon, speed order)."""
    def draw(p: np.ndarray) -> int:
        c = np.cumsum(p)
        return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"),
                       len(p) - 1))
    return Decision(draw(dist.lateral), draw(dist.lon), draw(dist.speed))


def argmax_decision(dist: PolicyDistribution) -> Decision:
    return Decision(int(np.argmax(dist.lateral)), int(np.argmax(dist.lon)),
                    int(np.argmax(dist.speed)))


def decision_log_prob(dist: PolicyDistribution, d: Decision) -> float:
    """Sum of per-head log-probabilities (heads are independent);
    probabilities are floored at 1e-12."""
    p = (dist.lateral[d.lateral], dist.lon[d.lon_bin], dist.speed[d.speed_bin])
    return float(sum(np.log(max(x, PROB_FLOOR)) for x in p))


def decision_entropy(dist: PolicyDistribution) -> float:
    """Sum of per-head Shannon entropies, in nats."""
    total = 0.0
    for p in dist.heads():
        nz = p[p > 0.0]
        total -= float(np.sum(nz * np.log(nz)))
    return total


def decode_decision(d: Decision, lmap: LocalMap) -> GoalState:
    """Ground a categorical decision into a goal for the planner.

    The target point sits 10 * (lon_bin + 1) m along the chosen lateral
    corridor from the ego's projection; target speed is the midpoint of the
    chosen quarter of [0, v_allow]. A lateral choice without a legal lane
    degrades to keeping the current lane, so every decision stays decodable.
    """
    route = None
    if d.lateral == CHANGE_LEFT:
        route = lmap.routes.get("left")
    elif d.lateral == CHANGE_RIGHT:
        route = lmap.routes.get("right")
    if route is None:
        route = lmap.routes["keep"]
    s_target = route.start_s + LON_INTERVAL * (d.lon_bin + 1)
    point = np.array(route.poly.point_at(s_target))
    heading = route.poly.heading_at(s_target)
    speed = (d.speed_bin + 0.5) * lmap.v_allow / N_SPEED
    return GoalState(point, heading, speed)


# --- checkpoint format -------------------------------------------------------
# Flat binary, little-endian: magic "MDPO", uint32 layer count L, uint32
# dims[L+1], then per layer a row-major (out x in) float64 weight matrix
# followed by the float64 bias vector.

MAGIC = b"MDPO"


def save_mlp(path: str, params: MlpParams) -> None:
    dims = params.dims
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.asarray([len(dims) - 1], dtype="<u4").tobytes())
        fh.write(np.asarray(dims, dtype="<u4").tobytes())
        for w, b in zip(params.weights, params.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_mlp(path: str) -> MlpParams:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path} is not a policy checkpoint")
        (n_layers,) = np.frombuffer(fh.read(4), dtype="<u4")
        dims = np.frombuffer(fh.read(4 * (int(n_layers) + 1)), dtype="<u4").astype(int)
        weights, biases = [], []
        for i in range(int(n_layers)):
            fan_in, fan_out = dims[i], dims[i + 1]
            w = np.frombuffer(fh.read(8 * fan_in * fan_out), dtype="<f8")
            weights.append(w.reshape(fan_out, fan_in).copy())
            biases.append(np.frombuffer(fh.read(8 * fan_out), dtype="<f8").copy())
    return MlpParams(weights, biases)
