import math
import time

import numpy as np
import pytest

from moddrive import planner as pl
from moddrive.decision_policy import GoalState
from moddrive.geometry import Pose2D


def straight_path(length=30.0):
    return pl.plan_path(Pose2D(0.0, 0.0, 0.0),
                        GoalState(np.array([length, 0.0]), 0.0, 5.0))


# --- bezier path -----------------------------------------------------------------

def test_plan_path_collinear_control_points():
    path = straight_path(30.0)
    assert np.allclose(path.p_1, [10.0, 0.0])
    assert np.allclose(path.p_2, [20.0, 0.0])


def test_bezier_endpoints_exact():
    path = pl.plan_path(Pose2D(1.0, 2.0, 0.5), GoalState(np.array([20.0, 9.0]), -0.3, 5.0))
    assert np.array_equal(pl.bezier_eval(path, 0.0), path.p_s)
    assert np.array_equal(pl.bezier_eval(path, 1.0), path.p_g)


def test_bezier_midpoint_symmetry():
    path = pl.BezierPath(np.array([0.0, 0.0]), np.array([1.0, 0.0]),
                         np.array([2.0, 0.0]), np.array([3.0, 0.0]))
    assert np.allclose(pl.bezier_eval(path, 0.5), [1.5, 0.0])


def test_bezier_rejects_out_of_range():
    path = straight_path()
    with pytest.raises(ValueError):
        pl.bezier_eval(path, 1.5)
    with pytest.raises(ValueError):
        pl.bezier_eval(path, -0.2)


def test_start_tangent_parallel_to_heading():
    rng = np.random.default_rng(0)
    for _ in range(50):
        h = rng.uniform(-math.pi, math.pi)
        hg = rng.uniform(-math.pi, math.pi)
        goal = GoalState(rng.uniform(-30, 30, size=2), hg, 5.0)
        start = Pose2D(*rng.uniform(-5, 5, size=2), h)
        if np.hypot(*(goal.point - start.xy)) < 1.0:
            continue
        path = pl.plan_path(start, goal)
        d0 = pl.bezier_derivative(path, 0.0)
        assert math.atan2(d0[1], d0[0]) == pytest.approx(h, abs=1e-9)
        d1 = pl.bezier_derivative(path, 1.0)
        assert abs(math.sin(math.atan2(d1[1], d1[0]) - hg)) < 1e-9


def test_plan_path_degenerate_raises():
    with pytest.raises(pl.PlannerError):
        pl.plan_path(Pose2D(1.0, 1.0, 0.0), GoalState(np.array([1.0, 1.0]), 0.0, 5.0))


def test_lane_change_curvature_stays_low():
    path = pl.plan_path(Pose2D(0.0, 0.0, 0.0), GoalState(np.array([30.0, 3.5]), 0.0, 5.0))
    ts = np.linspace(0.0, 1.0, 4001)
    d = pl.bezier_derivative(path, ts)
    u = 1.0 - ts
    dd = 6 * (u[:, None] * (path.p_2 - 2 * path.p_1 + path.p_s)
              + ts[:, None] * (path.p_g - 2 * path.p_2 + path.p_1))
    curvature = np.abs(d[:, 0] * dd[:, 1] - d[:, 1] * dd[:, 0]) \
        / (d[:, 0]**2 + d[:, 1]**2)**1.5
    assert curvature.max() < 0.1


# --- arc length ------------------------------------------------------------------

def test_arc_length_straight_chord_exact():
    assert pl.arc_length(straight_path(30.0)) == pytest.approx(30.0, abs=1e-9)


def _subdivision_length(p0, p1, p2, p3, tol=1e-10):
    """Independent adaptive-subdivision oracle."""
    chord = np.linalg.norm(p3 - p0)
    poly = (np.linalg.norm(p1 - p0) + np.linalg.norm(p2 - p1)
            + np.linalg.norm(p3 - p2))
    if poly - chord < tol:
        return 0.5 * (poly + chord)
    m01, m12, m23 = (p0 + p1) / 2, (p1 + p2) / 2, (p2 + p3) / 2
    a, b = (m01 + m12) / 2, (m12 + m23) / 2
    m = (a + b) / 2
    return _subdivision_length(p0, m01, a, m) + _subdivision_length(m, b, m23, p3)


def test_arc_length_quarter_circle():
    # classical control-point construction for a quarter circle of radius 10
    k = 4.0 / 3.0 * math.tan(math.pi / 8)
    path = pl.BezierPath(np.array([10.0, 0.0]), np.array([10.0, 10 * k]),
                         np.array([10 * k, 10.0]), np.array([0.0, 10.0]))
    L = pl.arc_length(path)
    assert L == pytest.approx(math.pi * 5.0, rel=1e-3)          # ~15.708
    oracle = _subdivision_length(path.p_s, path.p_1, path.p_2, path.p_g)
    assert L == pytest.approx(oracle, abs=1e-9)


def test_arc_length_at_least_chord():
    rng = np.random.default_rng(2)
    for _ in range(100):
        pts = rng.uniform(-20, 20, size=(4, 2))
        path = pl.BezierPath(*pts)
        assert pl.arc_length(path) >= np.linalg.norm(pts[3] - pts[0]) - 1e-9


# --- equality-constrained QP -------------------------------------------------------

def test_solve_eq_qp_scalar():
    qp = pl.EqQP(np.array([[2.0]]), np.zeros(1), np.array([[1.0]]), np.array([1.0]))
    assert pl.solve_eq_qp(qp) == pytest.approx([1.0])


def test_solve_eq_qp_symmetric_pair():
    qp = pl.EqQP(2 * np.eye(2), np.zeros(2), np.array([[1.0, 1.0]]), np.array([2.0]))
    assert np.allclose(pl.solve_eq_qp(qp), [1.0, 1.0])


def test_solve_eq_qp_singular_raises():
    qp = pl.EqQP(np.zeros((2, 2)), np.zeros(2),
                 np.array([[1.0, 0.0], [1.0, 0.0]]), np.array([1.0, 1.0]))
    with pytest.raises(pl.SingularKktError):
        pl.solve_eq_qp(qp)


def _random_qp(rng, n=12, m=4):
    M = rng.standard_normal((n, n))
    H = M.T @ M + 0.01 * np.eye(n)
    A = rng.standard_normal((m, n))
    return pl.EqQP(H, rng.standard_normal(n), A, rng.standard_normal(m))


def _oracle_solve(qp):
    """Independent route: normal-equation elimination of the full KKT system."""
    n, m = qp.H.shape[0], qp.A.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = qp.H
    kkt[:n, n:] = qp.A.T
    kkt[n:, :n] = qp.A
    rhs = np.concatenate([-qp.f, qp.b])
    sol = np.linalg.solve(kkt.T @ kkt, kkt.T @ rhs)
    return sol[:n]


@pytest.mark.slow
def test_solve_eq_qp_against_oracle_1000():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        qp = _random_qp(rng)
        worst = max(worst, float(np.max(np.abs(pl.solve_eq_qp(qp) - _oracle_solve(qp)))))
    assert worst < 1e-6


# --- velocity profile ---------------------------------------------------------------

def test_constant_speed_profile_is_exact():
    n, dT, v = 5, 0.2, 10.0
    qp = pl.velocity_qp(v * n * dT, v, 0.0, v, n, dT)
    x = pl.solve_eq_qp(qp)
    assert pl.qp_objective(qp, x) < 1e-10
    profile = pl.SplineProfile(n, dT, x.reshape(n, 5))
    for t in np.linspace(0.0, n * dT, 101):
        assert profile.vel(t) == pytest.approx(v, abs=1e-7)
        assert abs(profile.acc(t)) < 1e-6
        assert profile.value(t) == pytest.approx(v * t, abs=1e-7)


def test_zero_motion_profile_is_zero():
    profile = pl.plan_velocity(0.0, 0.0, 0.0, 0.0, n=5, dT=0.2)
    assert np.allclose(profile.coeffs, 0.0)
    assert profile.value(0.7) == 0.0


def test_profile_boundary_conditions():
    rng = np.random.default_rng(4)
    for _ in range(50):
        L = rng.uniform(1.0, 60.0)
        v0, a0, vg = rng.uniform(0, 14), rng.uniform(-3, 3), rng.uniform(0, 14)
        dT = rng.uniform(0.1, 1.0)
        p = pl.plan_velocity(L, v0, a0, vg, 5, dT)
        assert p.vel(0.0) == pytest.approx(v0, abs=1e-8)
        assert p.acc(0.0) == pytest.approx(a0, abs=1e-8)
        assert p.vel(p.duration) == pytest.approx(vg, abs=1e-8)
        assert p.value(0.0) == pytest.approx(0.0, abs=1e-8)
        assert p.value(p.duration) == pytest.approx(L, abs=1e-6)


def test_profile_c2_knot_continuity():
    p = pl.plan_velocity(35.0, 8.0, 1.0, 3.0, 5, 0.5)
    for k in range(p.n - 1):
        t = (k + 1) * p.dT
        before, after = t - 1e-12, t + 1e-12
        row = p.coeffs[k]
        tau = p.dT
        vel_end = row[1] + 2 * row[2] * tau + 3 * row[3] * tau**2 + 4 * row[4] * tau**3
        acc_end = 2 * row[2] + 6 * row[3] * tau + 12 * row[4] * tau**2
        nxt = p.coeffs[k + 1]
        assert abs(vel_end - nxt[1]) < 1e-8
        assert abs(acc_end - 2 * nxt[2]) < 1e-8
        # position continuity too
        pos_end = row @ np.array([1.0, tau, tau**2, tau**3, tau**4])
        assert abs(pos_end - nxt[0]) < 1e-8


def test_random_feasible_kkt_residual_and_optimality():
    rng = np.random.default_rng(8)
    for _ in range(50):
        L = rng.uniform(1.0, 50.0)
        v0, a0, vg = rng.uniform(0, 12), rng.uniform(-2, 2), rng.uniform(0, 12)
        dT = rng.uniform(0.15, 0.8)
        qp = pl.velocity_qp(L, v0, a0, vg, 5, dT)
        x = pl.solve_eq_qp(qp)
        assert pl.kkt_residual(qp, x) < 1e-8
        # feasible-perturbation optimality probe: move within null(A)
        obj = pl.qp_objective(qp, x)
        ns = _nullspace(qp.A)
        for _ in range(20):
            step = ns @ rng.standard_normal(ns.shape[1])
            x2 = x + 0.1 * step / max(np.linalg.norm(step), 1e-12)
            assert np.allclose(qp.A @ x2, qp.b, atol=1e-8)
            assert pl.qp_objective(qp, x2) >= obj - 1e-9


def _nullspace(A):
    _, s, vt = np.linalg.svd(A)
    rank = int(np.sum(s > 1e-10))
    return vt[rank:].T


def test_solver_speed_under_one_ms():
    qp = pl.velocity_qp(25.0, 8.0, 0.5, 5.0, 5, 0.4)
    pl.solve_eq_qp(qp)   # warm up
    t0 = time.perf_counter()
    n = 50
    for _ in range(n):
        pl.solve_eq_qp(qp)
    per_solve = (time.perf_counter() - t0) / n
    assert per_solve < 1e-3


def test_infeasible_negative_length():
    with pytest.raises(pl.PlannerError):
        pl.plan_velocity(-5.0, 1.0, 0.0, 1.0, 5, 0.2)


# --- composed trajectory --------------------------------------------------------------

def make_traj(L=30.0, v0=7.0, a0=0.0, vg=7.0, lateral=0.0):
    goal = GoalState(np.array([L, lateral]), 0.0, vg)
    return pl.make_trajectory(Pose2D(0.0, 0.0, 0.0), v0, a0, goal)


def test_trajectory_sample_endpoints():
    traj = make_traj()
    point, heading, speed = traj.sample(0.0)
    assert np.allclose(point, [0.0, 0.0], atol=1e-9)
    assert heading == pytest.approx(0.0)
    assert speed == pytest.approx(7.0)
    point, _, _ = traj.sample(traj.horizon)
    assert np.allclose(point, traj.path.p_g, atol=1e-3)


def test_trajectory_sample_out_of_range():
    traj = make_traj()
    with pytest.raises(ValueError):
        traj.sample(traj.horizon + 1.0)
    with pytest.raises(ValueError):
        traj.sample(-0.5)


def test_straight_constant_speed_samples():
    # exact linear profile: horizon consistent with L = v * n * dT
    v, n, dT = 10.0, 5, 0.4
    path = straight_path(v * n * dT)
    profile = pl.plan_velocity(v * n * dT, v, 0.0, v, n, dT)
    traj = pl.PlannedTrajectory(path, profile, pl.arc_length(path))
    for t in np.linspace(0.0, traj.horizon, 30):
        point, heading, speed = traj.sample(t)
        assert speed == pytest.approx(v, abs=1e-6)
        assert abs(point[1]) < 1e-9
        assert heading == pytest.approx(0.0, abs=1e-12)


def test_velocity_monotone_for_forward_motion():
    rng = np.random.default_rng(9)
    for _ in range(40):
        traj = make_traj(L=rng.uniform(8, 50), v0=rng.uniform(0.5, 12),
                         a0=rng.uniform(-1, 1), vg=rng.uniform(0.5, 12),
                         lateral=rng.uniform(-3.5, 3.5))
        assert traj.profile.monotone
        for t in np.linspace(0, traj.horizon, 40):
            assert traj.sample(t)[2] >= 0.0


def test_pipeline_determinism_bit_identical():
    goal = GoalState(np.array([28.0, 3.5]), 0.1, 6.0)
    a = pl.make_trajectory(Pose2D(0.5, -0.2, 0.05), 6.5, 0.3, goal)
    b = pl.make_trajectory(Pose2D(0.5, -0.2, 0.05), 6.5, 0.3, goal)
    assert np.array_equal(a.profile.coeffs, b.profile.coeffs)
    assert a.length == b.length
    for t in np.linspace(0, a.horizon, 23):
        pa, ha, va = a.sample(t)
        pb, hb, vb = b.sample(t)
        assert np.array_equal(pa, pb) and ha == hb and va == vb


# --- goal speed capping -----------------------------------------------------------------

def test_cap_goal_speed_lead_in_corridor():
    from moddrive import local_map as lm
    world = ws_single_lane()
    lmap = lm.build_local_map(world)
    # place the decoded target well past the lead vehicle
    goal = GoalState(np.array([world.ego.pose.x + 40.0, 0.0]), 0.0, 9.7)
    capped = pl.cap_goal_speed(goal, lmap)
    lead_speed = world.zombies[0].state.speed
    assert capped.speed == pytest.approx(lead_speed, abs=1e-6)


def test_cap_goal_speed_adjacent_lane_untouched():
    from moddrive import local_map as lm
    world = ws_single_lane()
    world.zombies[0].state.pose.y = 3.5   # move the zombie a lane over
    lmap = lm.build_local_map(world)
    goal = GoalState(np.array([world.ego.pose.x + 40.0, 0.0]), 0.0, 9.7)
    assert pl.cap_goal_speed(goal, lmap).speed == pytest.approx(9.7)


def ws_single_lane():
    from moddrive import world_sim as ws
    return ws.create_scenario(ws.default_config(ws.ScenarioKind.SINGLE_LANE_FOLLOWING,
                                                seed=1))
