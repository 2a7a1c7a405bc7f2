"""Baseline-controller tests: closed-form minimum-jerk primitives against
the classic quintic and numerical optimization, plus the tracking MPC."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import minimize

from highmpc.baselines import (STANDARD_MPC_Q, BaselineError, JerkPrimitive,
                               MinJerkConfig, MinJerkController,
                               StandardMpcController, flatness_track,
                               min_jerk_primitive, primitive_feasible,
                               select_primitive, standard_mpc_step)
from highmpc.dynamics import (GRAVITY, PendulumParams, QuadState, gate_pose,
                              predict_gate_trajectory)
from highmpc.trajopt import InputBounds, MpcConfig


def rest_to_rest(p0, pf, T):
    return min_jerk_primitive(np.array(p0), np.zeros(3), np.zeros(3),
                              list(pf), [0.0, 0.0, 0.0], [0.0, 0.0, 0.0], T)


# ---------------------------------------------------------------------------
# closed-form primitive
# ---------------------------------------------------------------------------

def test_boundary_exactness():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p0, v0, a0 = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)
        pf, vf, af = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)
        T = rng.uniform(0.5, 4.0)
        prim = min_jerk_primitive(p0, v0, a0, list(pf), list(vf), list(af), T)
        np.testing.assert_allclose(prim.position(0.0), p0, atol=1e-12)
        np.testing.assert_allclose(prim.velocity(0.0), v0, atol=1e-12)
        np.testing.assert_allclose(prim.acceleration(0.0), a0, atol=1e-12)
        np.testing.assert_allclose(prim.position(T), pf, atol=1e-9)
        np.testing.assert_allclose(prim.velocity(T), vf, atol=1e-9)
        np.testing.assert_allclose(prim.acceleration(T), af, atol=1e-9)


def test_matches_classic_quintic():
    # rest-to-rest minimum jerk is the textbook quintic
    # p(t) = p0 + (pf - p0)(10 tau^3 - 15 tau^4 + 6 tau^5)
    p0 = np.array([1.0, -2.0, 0.5])
    pf = np.array([4.0, 1.0, 2.5])
    T = 2.0
    prim = rest_to_rest(p0, pf, T)
    for t in np.linspace(0, T, 9):
        tau = t / T
        ref = p0 + (pf - p0) * (10 * tau**3 - 15 * tau**4 + 6 * tau**5)
        np.testing.assert_allclose(prim.position(t), ref, atol=1e-9)


def test_jerk_cost_matches_quadrature():
    rng = np.random.default_rng(1)
    prim = min_jerk_primitive(rng.normal(size=3), rng.normal(size=3),
                              rng.normal(size=3), list(rng.normal(size=3)),
                              list(rng.normal(size=3)), list(rng.normal(size=3)),
                              1.7)
    num = sum(quad(lambda t, ax=ax: prim.jerk(t)[ax] ** 2, 0.0, 1.7)[0]
              for ax in range(3))
    assert prim.jerk_cost() == pytest.approx(num, rel=1e-9)


def test_free_end_constraints_are_jerk_optimal():
    # the natural-boundary solution must beat every fully-constrained
    # polynomial over the free end values (numerical minimization oracle)
    p0 = np.array([0.0, 0.0, 0.0])
    v0 = np.array([1.0, -0.5, 0.2])
    a0 = np.array([0.0, 0.5, -0.3])
    pf = [3.0, 1.0, 2.0]
    T = 1.5
    free = min_jerk_primitive(p0, v0, a0, pf, [None] * 3, [None] * 3, T)

    def cost(end):
        vf, af = end[:3], end[3:]
        prim = min_jerk_primitive(p0, v0, a0, pf, list(vf), list(af), T)
        return prim.jerk_cost()

    res = minimize(cost, np.zeros(6), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000})
    assert free.jerk_cost() <= res.fun + 1e-8
    np.testing.assert_allclose(np.concatenate([free.velocity(T),
                                               free.acceleration(T)]),
                               res.x, atol=1e-3)


def test_free_position_zero_alpha():
    prim = min_jerk_primitive(np.zeros(3), np.ones(3), np.zeros(3),
                              [None, 1.0, 2.0], [0.0, 0.0, 0.0],
                              [0.0, 0.0, 0.0], 1.0)
    assert prim.coeffs[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_jerk_cost_monotone_in_duration():
    costs = [rest_to_rest([0, 0, 0], [3.0, 0.0, 0.0], T).jerk_cost()
             for T in (0.5, 1.0, 2.0, 4.0)]
    assert costs == sorted(costs, reverse=True)


def test_rejects_nonpositive_duration():
    with pytest.raises(BaselineError):
        rest_to_rest([0, 0, 0], [1, 1, 1], 0.0)


# ---------------------------------------------------------------------------
# feasibility and selection
# ---------------------------------------------------------------------------

def test_feasibility_flags():
    bounds = InputBounds()
    gentle = rest_to_rest([0, 0, 0], [1.0, 0, 0], 2.0)
    assert primitive_feasible(gentle, bounds)
    violent = rest_to_rest([0, 0, 0], [30.0, 0, 0], 0.6)
    assert not primitive_feasible(violent, bounds)


def test_select_primitive_returns_fastest_feasible():
    cfg = MinJerkConfig()
    pp = PendulumParams(anchor=[3.0, 0.0, 3.0])
    prim, T = select_primitive(np.array([0.0, 0, 1.5]), np.zeros(3), np.zeros(3),
                               pp, 0.4, 0.0, cfg)
    assert prim is not None
    assert T == pytest.approx(round(T / cfg.t_grid_step) * cfg.t_grid_step)
    assert primitive_feasible(prim, cfg.bounds, cfg.a_max, cfg.n_check, cfg.g_z)
    # every strictly faster grid candidate must be infeasible
    n_faster = int(round(T / cfg.t_grid_step)) - 1
    th, thd = 0.4, 0.0
    from highmpc.dynamics import integrate_pendulum
    for i in range(1, n_faster + 1):
        Ti = i * cfg.t_grid_step
        for _ in range(2):
            th, thd = integrate_pendulum(th, thd, pp, cfg.t_grid_step / 2)
        wp = gate_pose(th, thd, pp).p
        cand = min_jerk_primitive(np.array([0.0, 0, 1.5]), np.zeros(3),
                                  np.zeros(3), wp, [None, 0.0, 0.0],
                                  [None] * 3, Ti)
        assert not primitive_feasible(cand, cfg.bounds, cfg.a_max,
                                      cfg.n_check, cfg.g_z)


# ---------------------------------------------------------------------------
# flatness tracking and controllers
# ---------------------------------------------------------------------------

def test_flatness_hover():
    x = QuadState.hover([0.0, 0.0, 1.5]).as_array()
    u = flatness_track(x, np.zeros(3), MinJerkConfig())
    np.testing.assert_allclose(u, [GRAVITY, 0, 0, 0], atol=1e-9)


def test_flatness_commands_within_bounds():
    rng = np.random.default_rng(2)
    cfg = MinJerkConfig()
    for _ in range(50):
        from highmpc.dynamics import quat_normalize
        x = np.concatenate([rng.normal(size=3),
                            quat_normalize(rng.normal(size=4)),
                            rng.normal(size=3)])
        u = flatness_track(x, rng.uniform(-15, 15, 3), cfg)
        assert np.all(u >= cfg.bounds.lower - 1e-12)
        assert np.all(u <= cfg.bounds.upper + 1e-12)


def test_standard_mpc_tracks_static_gate():
    cfg = MpcConfig(horizon_s=2.0, dt=0.1)
    pp = PendulumParams(anchor=[2.0, 0.0, 3.0], b=0.5)
    gate = gate_pose(0.0, 0.0, pp)
    traj_refs = predict_gate_trajectory(gate, pp, cfg.H, cfg.dt)
    goal = QuadState.hover([4.5, 0.0, 1.55]).as_array()
    x = QuadState.hover([1.5, 0.3, 1.2]).as_array()
    u, traj = standard_mpc_step(x, traj_refs, goal, cfg)
    assert u.shape == (4,)
    assert traj.solve_stats["converged"]
    # y/z approach the gate center over the horizon (x is unweighted)
    d0 = np.linalg.norm(x[1:3] - gate.p[1:3])
    dH = np.linalg.norm(traj.states[cfg.H // 2, 1:3] - gate.p[1:3])
    assert dH < d0
    assert STANDARD_MPC_Q[0] == 0.0 and STANDARD_MPC_Q[7] == 0.0


def test_standard_controller_smoke():
    cfg = MpcConfig(horizon_s=2.0, dt=0.1)
    pp = PendulumParams(anchor=[2.0, 0.0, 3.0])
    goal = QuadState.hover([4.5, 0.0, 1.55]).as_array()
    ctl = StandardMpcController(cfg, goal)
    ctl.reset()
    x = QuadState.hover([0.0, 0.0, 1.55]).as_array()
    gates = [gate_pose(0.4, 0.0, pp)]
    u1 = ctl.command(x, gates, [pp], 0)
    u2 = ctl.command(x, gates, [pp], 1)  # past the last gate: goal tracking
    assert u1.shape == (4,) and u2.shape == (4,)


def test_min_jerk_controller_smoke():
    pp = PendulumParams(anchor=[2.0, 0.0, 3.0])
    goal = QuadState.hover([4.5, 0.0, 1.55]).as_array()
    ctl = MinJerkController(goal)
    ctl.reset()
    x = QuadState.hover([0.0, 0.0, 1.55]).as_array()
    gates = [gate_pose(0.4, 0.0, pp)]
    u = ctl.command(x, gates, [pp], 0)
    b = ctl.cfg.bounds
    assert np.all(u >= b.lower - 1e-12) and np.all(u <= b.upper + 1e-12)
    assert ctl.fallback_count == 0
