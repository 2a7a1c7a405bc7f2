"""Comparison controllers: a standard tracking MPC without traversal-time
knowledge, and a sampled minimum-jerk motion-primitive planner.

The standard MPC tracks the predicted gate trajectory at every stage with a
fixed diagonal weight. The primitive planner enumerates candidate traversal
times on a grid, builds a closed-form minimum-jerk polynomial to the gate
waypoint predicted at each candidate time, rejects dynamically infeasible
candidates, picks the fastest feasible one and tracks it by differential
flatness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (GRAVITY, GateState, PendulumParams, gate_pose,
                       integrate_pendulum, predict_gate_trajectory, quat_normalize,
                       quat_rotate)
from .trajopt import (InputBounds, MpcConfig, Trajectory, TrajOptError,
                      solve_trajectory, tracking_cost)

# the baseline's tracking weight: no x-position or x-velocity tracking
STANDARD_MPC_Q = np.array([0.0, 100, 100, 10, 10, 10, 10, 0, 10, 10])


class BaselineError(ValueError):
    pass


def standard_mpc_step(x: np.ndarray, gate_traj: list[GateState], goal: np.ndarray,
                      cfg: MpcConfig, warm_start: Trajectory | None = None,
                      Q: np.ndarray = STANDARD_MPC_Q) -> tuple[np.ndarray, Trajectory]:
    """One step of the baseline MPC: track the moving gate at every stage."""
    H = cfg.H
    refs = np.array([g.as_array() for g in gate_traj[:H]])
    if refs.shape[0] < H:
        refs = np.vstack([refs, np.tile(refs[-1], (H - refs.shape[0], 1))])
    cost = tracking_cost(refs, Q, goal, cfg.weights, H, cfg.g_z)
    traj = solve_trajectory(np.asarray(x, dtype=float), cost, cfg.bounds, H, cfg.dt,
                            warm_start=warm_start, params=cfg.solver)
    return traj.inputs[0].copy(), traj


class StandardMpcController:
    """Receding-horizon wrapper around ``standard_mpc_step`` with warm starts."""

    def __init__(self, cfg: MpcConfig, goal: np.ndarray):
        self.cfg = cfg
        self.goal = np.asarray(goal, dtype=float)
        self._warm: Trajectory | None = None
        self._last_u: np.ndarray | None = None

    def reset(self):
        self._warm = None
        self._last_u = None

    def command(self, x, gates, pps, next_idx):
        cfg = self.cfg
        if next_idx < len(gates):
            gate_traj = predict_gate_trajectory(gates[next_idx], pps[next_idx],
                                                cfg.H, cfg.dt, cfg.g_z)
        else:
            gate_traj = [GateState(0.0, 0.0, self.goal[0:3], self.goal[3:7],
                                   self.goal[7:10])] * (cfg.H + 1)
        warm = None
        if self._warm is not None:
            U = np.vstack([self._warm.inputs[1:], self._warm.inputs[-1]])
            warm = Trajectory(self._warm.states, U, self._warm.stage_costs,
                              self._warm.total_cost, self._warm.solve_stats)
        try:
            u, traj = standard_mpc_step(x, gate_traj, self.goal, cfg, warm)
        except TrajOptError:
            if self._last_u is None:
                raise
            return self._last_u.copy()
        self._warm = traj
        self._last_u = u
        return u


@dataclass
class JerkPrimitive:
    """Per-axis quintic minimum-jerk polynomial over [0, T].

    Each axis stores (alpha, beta, gamma) of the jerk profile
    j(t) = alpha t^2 / 2 + beta t + gamma plus the initial (p0, v0, a0).
    """

    coeffs: np.ndarray  # (3, 3): per-axis (alpha, beta, gamma)
    p0: np.ndarray
    v0: np.ndarray
    a0: np.ndarray
    T: float

    def position(self, t):
        a, b, g = self.coeffs.T
        return (a * t**5 / 120 + b * t**4 / 24 + g * t**3 / 6
                + self.a0 * t**2 / 2 + self.v0 * t + self.p0)

    def velocity(self, t):
        a, b, g = self.coeffs.T
        return a * t**4 / 24 + b * t**3 / 6 + g * t**2 / 2 + self.a0 * t + self.v0

    def acceleration(self, t):
        a, b, g = self.coeffs.T
        return a * t**3 / 6 + b * t**2 / 2 + g * t + self.a0

    def jerk(self, t):
        a, b, g = self.coeffs.T
        return a * t**2 / 2 + b * t + g

    def jerk_cost(self) -> float:
        """Integral of squared jerk over [0, T], summed over axes."""
        a, b, g = self.coeffs.T
        T = self.T
        per_axis = (a**2 * T**5 / 20 + a * b * T**4 / 4
                    + (b**2 + a * g) * T**3 / 3 + b * g * T**2 + g**2 * T)
        return float(np.sum(per_axis))


def _solve_axis(p0, v0, a0, pf, vf, af, T):
    """Closed-form per-axis coefficients; None end constraints become the
    natural (transversality) conditions of the jerk-optimal solution."""
    rows, rhs = [], []
    if pf is not None:
        rows.append([T**5 / 120, T**4 / 24, T**3 / 6])
        rhs.append(pf - p0 - v0 * T - a0 * T**2 / 2)
    else:
        rows.append([1.0, 0.0, 0.0])  # free position: alpha = 0
        rhs.append(0.0)
    if vf is not None:
        rows.append([T**4 / 24, T**3 / 6, T**2 / 2])
        rhs.append(vf - v0 - a0 * T)
    else:
        rows.append([T, 1.0, 0.0])  # free velocity: alpha T + beta = 0
        rhs.append(0.0)
    if af is not None:
        rows.append([T**3 / 6, T**2 / 2, T])
        rhs.append(af - a0)
    else:
        rows.append([T**2 / 2, T, 1.0])  # free acceleration
        rhs.append(0.0)
    return np.linalg.solve(np.array(rows), np.array(rhs))


def min_jerk_primitive(p0, v0, a0, pf, vf, af, T: float) -> JerkPrimitive:
    """Minimum-jerk polynomial from a full start state to partial end
    constraints (use None for free end entries, per axis)."""
    if T <= 0:
        raise BaselineError(f"duration must be positive, got {T}")
    p0 = np.asarray(p0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    a0 = np.asarray(a0, dtype=float)
    coeffs = np.empty((3, 3))
    for ax in range(3):
        coeffs[ax] = _solve_axis(p0[ax], v0[ax], a0[ax],
                                 None if pf[ax] is None else float(pf[ax]),
                                 None if vf[ax] is None else float(vf[ax]),
                                 None if af[ax] is None else float(af[ax]), T)
    return JerkPrimitive(coeffs, p0, v0, a0, float(T))


def primitive_feasible(prim: JerkPrimitive, bounds: InputBounds,
                       a_max: float = 12.0, n_check: int = 50,
                       g_z: float = GRAVITY) -> bool:
    """Conservative grid check: thrust magnitude within the collective-thrust
    box and per-axis acceleration within +/- a_max at every node."""
    ts = np.linspace(0.0, prim.T, n_check)
    for t in ts:
        acc = prim.acceleration(t)
        if np.any(np.abs(acc) > a_max):
            return False
        c = np.linalg.norm(acc + np.array([0.0, 0.0, g_z]))
        if c < bounds.lower[0] or c > bounds.upper[0]:
            return False
    return True


@dataclass
class MinJerkConfig:
    t_grid_max: float = 3.0
    t_grid_step: float = 0.1
    a_max: float = 12.0
    n_check: int = 50
    tau_att: float = 0.3  # attitude-loop time constant of the flatness tracker
    lookahead: float = 0.1
    bounds: InputBounds = field(default_factory=InputBounds)
    g_z: float = GRAVITY


def select_primitive(p0, v0, a0, pp: PendulumParams, theta: float, theta_dot: float,
                     cfg: MinJerkConfig) -> tuple[JerkPrimitive | None, float]:
    """Fastest feasible primitive to the gate waypoint predicted at each
    candidate traversal time on the grid; (None, nan) if all are rejected."""
    n_cand = int(round(cfg.t_grid_max / cfg.t_grid_step))
    th, thd = theta, theta_dot
    sub = 2  # pendulum prediction substeps per grid step
    for i in range(1, n_cand + 1):
        T = i * cfg.t_grid_step
        for _ in range(sub):
            th, thd = integrate_pendulum(th, thd, pp, cfg.t_grid_step / sub, cfg.g_z)
        waypoint = gate_pose(th, thd, pp).p
        prim = min_jerk_primitive(p0, v0, a0, waypoint, [None, 0.0, 0.0],
                                  [None, None, None], T)
        if primitive_feasible(prim, cfg.bounds, cfg.a_max, cfg.n_check, cfg.g_z):
            return prim, T
    return None, float("nan")


def flatness_track(x: np.ndarray, a_des: np.ndarray, cfg: MinJerkConfig) -> np.ndarray:
    """Map a desired acceleration to (c, omega) via differential flatness.

    The collective thrust realizes ||a_des + g e3||; body rates come from a
    first-order attitude law toward the thrust direction (yaw held at zero).
    """
    f = a_des + np.array([0.0, 0.0, cfg.g_z])
    c = float(np.linalg.norm(f))
    c = float(np.clip(c, cfg.bounds.lower[0], cfg.bounds.upper[0]))
    zb = f / max(np.linalg.norm(f), 1e-9)
    # minimal rotation taking e3 to zb (zero yaw)
    e3 = np.array([0.0, 0.0, 1.0])
    cross = np.cross(e3, zb)
    dot = float(np.clip(e3 @ zb, -1.0, 1.0))
    q_des = quat_normalize(np.array([1.0 + dot, *cross]))
    q = x[3:7]
    # error quaternion q_err = q^{-1} * q_des
    qc = np.array([q[0], -q[1], -q[2], -q[3]])
    w = qc[0] * q_des[0] - qc[1] * q_des[1] - qc[2] * q_des[2] - qc[3] * q_des[3]
    vx = qc[0] * q_des[1] + qc[1] * q_des[0] + qc[2] * q_des[3] - qc[3] * q_des[2]
    vy = qc[0] * q_des[2] - qc[1] * q_des[3] + qc[2] * q_des[0] + qc[3] * q_des[1]
    vz = qc[0] * q_des[3] + qc[1] * q_des[2] - qc[2] * q_des[1] + qc[3] * q_des[0]
    sign = 1.0 if w >= 0 else -1.0
    omega = (2.0 / cfg.tau_att) * sign * np.array([vx, vy, vz])
    omega = np.clip(omega, cfg.bounds.lower[1:4], cfg.bounds.upper[1:4])
    return np.array([c, *omega])


class MinJerkController:
    """Receding-horizon primitive sampler: re-select each control step, track
    by flatness. Falls back to hover on an empty feasible set."""

    def __init__(self, goal: np.ndarray, cfg: MinJerkConfig | None = None):
        self.goal = np.asarray(goal, dtype=float)
        self.cfg = cfg or MinJerkConfig()
        self._a_prev = np.zeros(3)
        self.fallback_count = 0

    def reset(self):
        self._a_prev = np.zeros(3)
        self.fallback_count = 0

    def command(self, x, gates, pps, next_idx):
        cfg = self.cfg
        p0, v0 = x[0:3], x[7:10]
        a0 = self._a_prev
        if next_idx < len(gates):
            g = gates[next_idx]
            prim, _ = select_primitive(p0, v0, a0, pps[next_idx],
                                       g.theta, g.theta_dot, cfg)
        else:
            prim = min_jerk_primitive(p0, v0, a0, self.goal[0:3], [0.0, 0.0, 0.0],
                                      [0.0, 0.0, 0.0], cfg.t_grid_max)
            if not primitive_feasible(prim, cfg.bounds, cfg.a_max, cfg.n_check, cfg.g_z):
                prim = None
        if prim is None:
            self.fallback_count += 1
            a_des = -1.0 * v0  # damp velocity in place
        else:
            a_des = prim.acceleration(min(cfg.lookahead, prim.T))
        self._a_prev = a_des
        return flatness_track(x, a_des, cfg)
