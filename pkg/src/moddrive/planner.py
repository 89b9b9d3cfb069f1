"""Deterministic trajectory generation: a cubic Bezier path to the goal plus
a quartic-spline velocity profile obtained from an equality-constrained QP
that minimizes squared acceleration and jerk.

Both stages are pure functions of their inputs, so a (state, goal) pair maps
to a bit-identical trajectory on every call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .decision_policy import GoalState
from .geometry import Pose2D, to_frame

if TYPE_CHECKING:  # pragma: no cover
    from .local_map import LocalMap

N_SEGMENTS = 5
PIVOT_TOL = 1e-12

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)
# mapped from [-1, 1] to [0, 1]
_GL_T = 0.5 * (_GL_NODES + 1.0)
_GL_W = 0.5 * _GL_WEIGHTS


class PlannerError(RuntimeError):
    pass


class SingularKktError(PlannerError):
    pass


@dataclass(frozen=True)
class BezierPath:
    p_s: np.ndarray
    p_1: np.ndarray
    p_2: np.ndarray
    p_g: np.ndarray


def plan_path(start: Pose2D, goal: GoalState) -> BezierPath:
    """Cubic Bezier from the start pose to the goal point with end tangents
    aligned to the start heading and the goal lane direction."""
    p_s = start.xy.astype(float)
    p_g = np.asarray(goal.point, dtype=float)
    chord = float(np.hypot(*(p_g - p_s)))
    if chord < 1e-9:
        raise PlannerError("degenerate path: goal coincides with start")
    leg = chord / 3.0
    p_1 = p_s + leg * np.array([math.cos(start.heading), math.sin(start.heading)])
    p_2 = p_g - leg * np.array([math.cos(goal.heading), math.sin(goal.heading)])
    return BezierPath(p_s, p_1, p_2, p_g)


def bezier_eval(path: BezierPath, t) -> np.ndarray:
    """Cubic Bernstein evaluation for t in [0, 1] (scalar or array)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < -1e-12) or np.any(t > 1.0 + 1e-12):
        raise ValueError("bezier parameter outside [0, 1]")
    t = np.clip(t, 0.0, 1.0)
    u = 1.0 - t
    tt = t[..., None] if t.ndim else t
    uu = u[..., None] if t.ndim else u
    out = (uu**3 * path.p_s + 3 * uu**2 * tt * path.p_1
           + 3 * uu * tt**2 * path.p_2 + tt**3 * path.p_g)
    return out


def bezier_derivative(path: BezierPath, t) -> np.ndarray:
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    u = 1.0 - t
    tt = t[..., None] if t.ndim else t
    uu = u[..., None] if t.ndim else u
    return 3.0 * (uu**2 * (path.p_1 - path.p_s)
                  + 2 * uu * tt * (path.p_2 - path.p_1)
                  + tt**2 * (path.p_g - path.p_2))


def arc_length(path: BezierPath) -> float:
    """Curve length by 32-point Gauss-Legendre quadrature of |B'(t)|."""
    d = bezier_derivative(path, _GL_T)
    return float(np.dot(_GL_W, np.hypot(d[:, 0], d[:, 1])))


# --- equality-constrained QP -------------------------------------------------

@dataclass
class EqQP:
    """min 1/2 x'Hx + f'x  s.t.  Ax = b, with H PSD on the null space of A."""

    H: np.ndarray
    f: np.ndarray
    A: np.ndarray
    b: np.ndarray


def _gauss_solve(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Dense Gaussian elimination with partial pivoting on the augmented
    matrix [m | rhs]."""
    n = len(rhs)
    aug = np.empty((n, n + 1))
    aug[:, :n] = m
    aug[:, n] = rhs
    for col in range(n):
        piv = col + int(np.argmax(np.abs(aug[col:, col])))
        if abs(aug[piv, col]) < PIVOT_TOL:
            raise SingularKktError(f"pivot {aug[piv, col]:.3e} below tolerance at column {col}")
        if piv != col:
            aug[[col, piv]] = aug[[piv, col]]
        factors = aug[col + 1:, col] / aug[col, col]
        aug[col + 1:, col:] -= factors[:, None] * aug[col, col:]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (aug[i, n] - aug[i, i + 1:n] @ x[i + 1:]) / aug[i, i]
    return x


def solve_eq_qp(qp: EqQP) -> np.ndarray:
    """Solve the KKT system [[H, A'], [A, 0]] [x; l] = [-f; b]; returns x."""
    H = np.atleast_2d(np.asarray(qp.H, dtype=float))
    f = np.asarray(qp.f, dtype=float)
    A = np.atleast_2d(np.asarray(qp.A, dtype=float))
    b = np.asarray(qp.b, dtype=float)
    n, m = H.shape[0], A.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = H
    kkt[:n, n:] = A.T
    kkt[n:, :n] = A
    sol = _gauss_solve(kkt, np.concatenate([-f, b]))
    return sol[:n]


def kkt_residual(qp: EqQP, x: np.ndarray) -> float:
    """Max-norm KKT residual of a candidate solution (stationarity uses the
    least-squares multiplier)."""
    g = qp.H @ x + qp.f
    lam, *_ = np.linalg.lstsq(qp.A.T, -g, rcond=None)
    return float(max(np.max(np.abs(qp.H @ x + qp.f + qp.A.T @ lam)),
                     np.max(np.abs(qp.A @ x - qp.b))))


# --- quartic-spline velocity profile ------------------------------------------

def _gram_accel(dT: float) -> np.ndarray:
    # integral over one segment of (d2/dt2 t^j)(d2/dt2 t^k)
    c = (0.0, 0.0, 2.0, 6.0, 12.0)
    m = np.zeros((5, 5))
    for j in range(2, 5):
        for k in range(2, 5):
            p = j + k - 3
            m[j, k] = c[j] * c[k] * dT**p / p
    return m


def _gram_jerk(dT: float) -> np.ndarray:
    c = (0.0, 0.0, 0.0, 6.0, 24.0)
    m = np.zeros((5, 5))
    for j in range(3, 5):
        for k in range(3, 5):
            p = j + k - 5
            m[j, k] = c[j] * c[k] * dT**p / p
    return m


def _pos_row(t: float) -> np.ndarray:
    return np.array([1.0, t, t**2, t**3, t**4])


def _vel_row(t: float) -> np.ndarray:
    return np.array([0.0, 1.0, 2 * t, 3 * t**2, 4 * t**3])


def _acc_row(t: float) -> np.ndarray:
    return np.array([0.0, 0.0, 2.0, 6 * t, 12 * t**2])


def _bezier_point_scalar(path: BezierPath, t: float) -> np.ndarray:
    u = 1.0 - t
    return (u * u * u * path.p_s + 3 * u * u * t * path.p_1
            + 3 * u * t * t * path.p_2 + t * t * t * path.p_g)


def _bezier_deriv_scalar(path: BezierPath, t: float) -> np.ndarray:
    u = 1.0 - t
    return 3.0 * (u * u * (path.p_1 - path.p_s)
                  + 2 * u * t * (path.p_2 - path.p_1)
                  + t * t * (path.p_g - path.p_2))


@dataclass
class SplineProfile:
    """n quartic segments s_i(t) = a + b t + c t^2 + d t^3 + e t^4 on a shared
    time unit dT; C2-continuous at the knots."""

    n: int
    dT: float
    coeffs: np.ndarray          # (n, 5)
    monotone: bool = True

    @property
    def duration(self) -> float:
        return self.n * self.dT

    def _locate(self, t: float) -> tuple[int, float]:
        t = min(max(t, 0.0), self.duration)
        i = min(int(t / self.dT), self.n - 1)
        return i, t - i * self.dT

    def value(self, t: float) -> float:
        i, tau = self._locate(t)
        a, b, c, d, e = self.coeffs[i]
        return a + tau * (b + tau * (c + tau * (d + tau * e)))

    def vel(self, t: float) -> float:
        i, tau = self._locate(t)
        _, b, c, d, e = self.coeffs[i]
        return b + tau * (2 * c + tau * (3 * d + tau * 4 * e))

    def acc(self, t: float) -> float:
        i, tau = self._locate(t)
        c, d, e = self.coeffs[i][2:]
        return 2 * c + tau * (6 * d + tau * 12 * e)


def velocity_qp(L: float, v_now: float, a_now: float, v_goal: float,
                n: int, dT: float) -> EqQP:
    """Assemble the profile-fitting QP over the 5n spline coefficients.

    Objective: sum of squared acceleration and squared jerk integrals per
    segment. Constraints: initial speed/acceleration, terminal speed, C1/C2
    knot continuity, plus position anchoring (s(0) = 0, position continuity,
    s(end) = L) that pins the fit to the path's arc length.
    """
    if n < 2 or dT <= 0:
        raise PlannerError("need n >= 2 segments and positive dT")
    if L < 0:
        raise PlannerError("negative arc length is infeasible")
    dim = 5 * n
    gram = _gram_accel(dT) + _gram_jerk(dT)
    H = np.zeros((dim, dim))
    for i in range(n):
        H[5 * i:5 * i + 5, 5 * i:5 * i + 5] = gram

    rows: list[np.ndarray] = []
    rhs: list[float] = []

    def add(entries: list[tuple[int, np.ndarray]], value: float) -> None:
        row = np.zeros(dim)
        for seg, r5 in entries:
            row[5 * seg:5 * seg + 5] += r5
        rows.append(row)
        rhs.append(value)

    add([(0, _vel_row(0.0))], v_now)
    add([(0, _acc_row(0.0))], a_now)
    add([(n - 1, _vel_row(dT))], v_goal)
    for k in range(n - 1):
        add([(k, _vel_row(dT)), (k + 1, -_vel_row(0.0))], 0.0)
        add([(k, _acc_row(dT)), (k + 1, -_acc_row(0.0))], 0.0)
    add([(0, _pos_row(0.0))], 0.0)
    for k in range(n - 1):
        add([(k, _pos_row(dT)), (k + 1, -_pos_row(0.0))], 0.0)
    add([(n - 1, _pos_row(dT))], L)

    return EqQP(H, np.zeros(dim), np.vstack(rows), np.array(rhs))


def plan_velocity(L: float, v_now: float, a_now: float, v_goal: float,
                  n: int = N_SEGMENTS, dT: float = 0.2) -> SplineProfile:
    """Solve the velocity QP and wrap the coefficients as a profile."""
    qp = velocity_qp(L, v_now, a_now, v_goal, n, dT)
    coeffs = solve_eq_qp(qp).reshape(n, 5)
    profile = SplineProfile(n, dT, coeffs)
    ts = np.linspace(0.0, profile.duration, 8 * n + 1)
    profile.monotone = bool(all(profile.vel(t) >= -1e-9 for t in ts))
    return profile


def qp_objective(qp: EqQP, x: np.ndarray) -> float:
    return float(0.5 * x @ qp.H @ x + qp.f @ x)


# --- composed trajectory -------------------------------------------------------

_TABLE_N = 256
_SUB_NODES, _SUB_WEIGHTS = np.polynomial.legendre.leggauss(8)


class PlannedTrajectory:
    """Bezier path plus velocity profile, with an arc-length lookup table for
    constant-time time-to-point sampling."""

    def __init__(self, path: BezierPath, profile: SplineProfile, length: float) -> None:
        self.path = path
        self.profile = profile
        self.length = length
        edges = np.linspace(0.0, 1.0, _TABLE_N + 1)
        mid = 0.5 * (edges[:-1] + edges[1:])
        half = 0.5 / _TABLE_N
        # per-interval 8-point quadrature of |B'|
        ts = mid[:, None] + half * _SUB_NODES[None, :]
        d = bezier_derivative(path, ts.ravel()).reshape(_TABLE_N, len(_SUB_NODES), 2)
        speeds = np.hypot(d[:, :, 0], d[:, :, 1])
        seg_len = (speeds @ _SUB_WEIGHTS) * half
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        if cum[-1] > 0:
            cum *= length / cum[-1]
        self._ts = edges
        self._cum = cum

    @property
    def horizon(self) -> float:
        return self.profile.duration

    def param_at_arclength(self, s: float) -> float:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self._cum, s, side="right")) - 1
        i = min(max(i, 0), _TABLE_N - 1)
        span = self._cum[i + 1] - self._cum[i]
        frac = 0.0 if span <= 0 else (s - self._cum[i]) / span
        return float(self._ts[i] + frac * (self._ts[i + 1] - self._ts[i]))

    def sample(self, t: float) -> tuple[np.ndarray, float, float]:
        """(point, tangent heading, speed) at plan-relative time t."""
        if t < -1e-9 or t > self.horizon + 1e-9:
            raise ValueError(f"sample time {t} outside [0, {self.horizon}]")
        s = min(max(self.profile.value(t), 0.0), self.length)
        u = self.param_at_arclength(s)
        point = _bezier_point_scalar(self.path, u)
        d = _bezier_deriv_scalar(self.path, u)
        norm = math.hypot(d[0], d[1])
        if norm < 1e-9:
            chord = self.path.p_g - self.path.p_s
            heading = math.atan2(chord[1], chord[0])
        else:
            heading = math.atan2(d[1], d[0])
        return point, heading, max(0.0, self.profile.vel(t))


def trajectory_sample(traj: PlannedTrajectory, t: float) -> tuple[np.ndarray, float, float]:
    return traj.sample(t)


def plan_horizon(L: float, v_now: float, v_goal: float) -> float:
    """Plan duration scaled to the maneuver, never below one second."""
    return max(1.0, 2.0 * L / (v_now + v_goal + 0.1))


def make_trajectory(start: Pose2D, v_now: float, a_now: float,
                    goal: GoalState) -> PlannedTrajectory:
    """The full deterministic decision-to-trajectory composition."""
    path = plan_path(start, goal)
    length = arc_length(path)
    horizon = plan_horizon(length, v_now, goal.speed)
    profile = plan_velocity(length, v_now, a_now, goal.speed,
                            N_SEGMENTS, horizon / N_SEGMENTS)
    return PlannedTrajectory(path, profile, length)


# --- goal rejection against traffic --------------------------------------------

CORRIDOR_RADIUS = 2.0    # center-to-center clearance that triggers a cap
PREDICT_HORIZON = 3.0    # seconds of straight-line neighbor extrapolation
FOLLOW_MARGIN = 7.5      # center-to-center slack kept behind a blocking lead
EXEC_WINDOW = 1.0        # seconds of a plan actually executed before replanning


def _seg_seg_dist(p1, p2, q1, q2) -> float:
    def seg_point(a, b, p):
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom < 1e-12 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
        return a + t * ab

    best = float("inf")
    for a, b, pts in ((p1, p2, (q1, q2)), (q1, q2, (p1, p2))):
        for p in pts:
            c = seg_point(a, b, p)
            best = min(best, float(np.hypot(*(c - p))))
    d = p2 - p1
    e = q2 - q1
    cross = d[0] * e[1] - d[1] * e[0]
    if abs(cross) > 1e-12:
        r = q1 - p1
        t = (r[0] * e[1] - r[1] * e[0]) / cross
        u = (r[0] * d[1] - r[1] * d[0]) / cross
        if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
            return 0.0
    return best


def cap_goal(goal: GoalState, lmap: "LocalMap", ego_speed: float,
             route=None, route_start: float = 0.0) -> GoalState:
    """Goal rejection against traffic in the corridor to the target.

    When the straight corridor to the goal point meets a neighbor's predicted
    sweep, the target speed is capped to that neighbor's along-corridor speed;
    the target point is additionally pulled back along the route so the plan's
    endpoint stays a follow margin behind the lead's predicted travel.
    Speed capping alone cannot hold a gap: the velocity profile is anchored to
    the goal distance, so an uncapped goal distance is always fully traversed.
    """
    target_local = to_frame(goal.point, lmap.ego_pose.xy, lmap.ego_pose.heading)[0]
    corridor_len = float(np.hypot(*target_local))
    if corridor_len < 1e-6:
        return goal
    direction = target_local / corridor_len
    # detection must out-reach the braking envelope even when the goal itself
    # is near: a short corridor would otherwise meet fast-approached traffic
    # too late for the brake authority; the envelope follows the faster of the
    # current and requested speed (the ego may still be shedding speed)
    v_ref = max(goal.speed, ego_speed)
    reach = max(corridor_len,
                v_ref * EXEC_WINDOW + v_ref**2 / 8.0 + FOLLOW_MARGIN)
    probe_end = direction * reach
    origin = np.zeros(2)
    speed = goal.speed
    gap_along = None
    lead_speed = None
    for i in range(lmap.n_neighbors):
        rel_p = lmap.neighbors[i, :2]
        v_z = lmap.neighbors[i, 2:4] + np.array([lmap.ego_speed, 0.0])
        sweep_end = rel_p + v_z * PREDICT_HORIZON
        if _seg_seg_dist(origin, probe_end, rel_p, sweep_end) < CORRIDOR_RADIUS:
            v_along = max(0.0, float(v_z @ direction))
            speed = min(speed, v_along)
            along = float(rel_p @ direction)
            if along > 0.0 and (gap_along is None or along < gap_along):
                gap_along, lead_speed = along, v_along
    if speed == goal.speed and gap_along is None:
        return goal
    goal = GoalState(goal.point, goal.heading, speed)
    if gap_along is None or route is None:
        return goal
    # pull the endpoint back so the goal trails the lead over the executed
    # window; plans are replanned every EXEC_WINDOW, so that window (not the
    # full horizon) is what bounds the gap erosion per cycle
    allowed = gap_along + lead_speed * EXEC_WINDOW - FOLLOW_MARGIN
    allowed = min(max(allowed, 1.0), corridor_len)
    if allowed >= corridor_len - 1e-9:
        return goal
    s_target = route_start + allowed
    point = np.array(route.point_at(s_target))
    return GoalState(point, route.heading_at(s_target), speed)


def cap_goal_speed(goal: GoalState, lmap: "LocalMap") -> GoalState:
    """Speed-only goal rejection (see :func:`cap_goal` for the full version)."""
    return cap_goal(goal, lmap, lmap.ego_speed)
