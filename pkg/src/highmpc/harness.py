"""Scenarios, closed-loop episodes, and the evaluation protocols.

Covers the three experiment families:

* planning: train a Gaussian policy for one fixed scenario and inspect the
  final plan's per-gate traversal errors,
* contextual planning: train the linear-Gaussian policy over random initial
  gate angles and report per-gate success/mean/std statistics against
  random-z and heuristic-z selectors,
* closed loop: run controllers through moving gates and sweep the gate
  spacing / initial forward velocity grid.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import yaml

from ._version import __version__
from .dynamics import (GRAVITY, GateState, PendulumParams, QuadState, gate_pose,
                       integrate_pendulum, integrate_quad_array,
                       predict_gate_trajectory)
from .policy_search import (GaussianPolicy, LinearGaussianPolicy, RffSpec,
                            init_gaussian_policy, train_gaussian,
                            train_linear_gaussian, traversal_reward)
from .trajopt import DecisionVars, MpcConfig, MpcController, TrajOptError

SUCCESS_THRESHOLD = 0.5  # meters, per gate


class HarnessError(ValueError):
    pass


@dataclass
class Scenario:
    """World description: gates, quad start, goal, horizon, reset noise."""

    name: str
    pendulums: list
    theta0: np.ndarray
    theta_dot0: np.ndarray
    x0: np.ndarray
    goal: np.ndarray
    horizon_s: float = 3.0
    dt: float = 0.05
    g_z: float = GRAVITY
    step_cap: int = 200
    time_penalty: float = 0.1
    context_half_width: float = 0.6  # initial-angle range for contexts
    reset_pos_noise: float = 0.3
    reset_vel_noise: float = 0.3
    rate_half_width: float = 0.3

    def __post_init__(self):
        self.theta0 = np.atleast_1d(np.asarray(self.theta0, dtype=float))
        self.theta_dot0 = np.atleast_1d(np.asarray(self.theta_dot0, dtype=float))
        self.x0 = np.asarray(self.x0, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)
        xs = [pp.anchor[0] for pp in self.pendulums]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise HarnessError("gates must be ordered by increasing anchor x")
        if self.dt <= 0:
            raise HarnessError("dt must be positive")

    @property
    def n_gates(self) -> int:
        return len(self.pendulums)

    def mpc_config(self) -> MpcConfig:
        return MpcConfig(horizon_s=self.horizon_s, dt=self.dt, g_z=self.g_z)

    def gates_at(self, thetas, theta_dots) -> list[GateState]:
        return [gate_pose(t, td, pp)
                for t, td, pp in zip(thetas, theta_dots, self.pendulums)]

    def sample_context(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-self.context_half_width, self.context_half_width,
                           size=self.n_gates)

    def reset(self, rng: np.random.Generator):
        """Randomized single-gate reset used for neural-policy data collection."""
        x = self.x0.copy()
        x[0:3] += rng.uniform(-self.reset_pos_noise, self.reset_pos_noise, size=3)
        x[7:10] += rng.uniform(-self.reset_vel_noise, self.reset_vel_noise, size=3)
        theta = float(rng.uniform(-self.context_half_width, self.context_half_width))
        theta_dot = float(rng.uniform(-self.rate_half_width, self.rate_half_width))
        return x, theta, theta_dot


def planning_scenario(n_gates: int = 3, dt: float = 0.05,
                      horizon_s: float = 3.0) -> Scenario:
    """Planning task: gates hanging ahead of the quad, goal past the last gate."""
    anchors_x = 1.5 + 2.5 * np.arange(n_gates)
    pps = [PendulumParams(anchor=[x, 0.0, 3.0]) for x in anchors_x]
    theta0 = np.array([0.6, -1.0, 0.5][:n_gates] + [0.3] * max(0, n_gates - 3))
    start = QuadState.hover([-1.0, 0.0, 1.55]).as_array()
    goal = QuadState.hover([anchors_x[-1] + 2.0, 0.0, 1.55]).as_array()
    return Scenario("planning", pps, theta0, np.zeros(n_gates), start, goal,
                    horizon_s=horizon_s, dt=dt, context_half_width=0.9)


def single_gate_scenario(dt: float = 0.1, horizon_s: float = 2.0) -> Scenario:
    """Closed-loop task with one swinging gate (real-world-like parameters)."""
    pp = PendulumParams(anchor=[2.0, 0.0, 3.0])
    start = QuadState.hover([-1.0, 0.0, 1.55]).as_array()
    goal = QuadState.hover([4.5, 0.0, 1.55]).as_array()
    return Scenario("single_gate", [pp], np.array([0.5]), np.zeros(1), start, goal,
                    horizon_s=horizon_s, dt=dt, step_cap=80)


def sweep_scenario(dx: float, v_x: float, n_gates: int = 5, dt: float = 0.1,
                   horizon_s: float = 2.0) -> Scenario:
    """Closed-loop task with ``n_gates`` moving gates spaced ``dx`` apart and
    initial forward velocity ``v_x``."""
    anchors_x = 1.5 + dx * np.arange(n_gates)
    pps = [PendulumParams(anchor=[x, 0.0, 3.0]) for x in anchors_x]
    start = QuadState.hover([-1.0, 0.0, 1.55]).as_array()
    start[7] = v_x
    goal = QuadState.hover([anchors_x[-1] + 2.0, 0.0, 1.55]).as_array()
    cap = int(np.ceil(3.0 * (anchors_x[-1] + 3.0) / (2.0 * dt)))
    return Scenario(f"sweep_dx{dx}_vx{v_x}", pps, np.zeros(n_gates),
                    np.zeros(n_gates), start, goal, horizon_s=horizon_s, dt=dt,
                    step_cap=max(cap, 60))


# ---------------------------------------------------------------------------
# planning-experiment helpers
# ---------------------------------------------------------------------------

def plan_gate_trajectories(scenario: Scenario, thetas, theta_dots=None):
    cfg = scenario.mpc_config()
    if theta_dots is None:
        theta_dots = np.zeros(scenario.n_gates)
    return [predict_gate_trajectory(gate_pose(t, td, pp), pp, cfg.H, cfg.dt,
                                    scenario.g_z)
            for t, td, pp in zip(thetas, theta_dots, scenario.pendulums)]


def plan_errors(z: DecisionVars, scenario: Scenario, thetas,
                theta_dots=None) -> np.ndarray:
    """Per-gate planning traversal errors ||p_q[h_i] - p_g[h_i]|| for one plan."""
    cfg = scenario.mpc_config()
    gate_trajs = plan_gate_trajectories(scenario, thetas, theta_dots)
    mpc = MpcController(cfg, scenario.goal)
    gates = [gt[0] for gt in gate_trajs]
    traj = mpc.plan(scenario.x0, z, gates,
                    scenario.pendulums)
    errs = np.empty(z.n_gates)
    for i in range(z.n_gates):
        h = int(np.floor(z.times[i] / cfg.dt))
        if h > cfg.H:
            errs[i] = np.inf
        else:
            errs[i] = np.linalg.norm(traj.states[h, 0:3] - gate_trajs[i][h].p)
    return errs


def make_plan_reward(scenario: Scenario, thetas=None):
    """Reward function z -> R for the planning experiments.

    With ``thetas`` fixed the signature is ``f(z_flat)``; otherwise the
    context (initial gate angles) is the second argument: ``f(z_flat, s)``.
    """
    cfg = scenario.mpc_config()
    mpc = MpcController(cfg, scenario.goal)

    def reward(z_flat, s=None):
        angles = thetas if s is None else s
        z = DecisionVars.from_flat(z_flat)
        gate_trajs = plan_gate_trajectories(scenario, angles)
        try:
            traj = mpc.plan(scenario.x0, z, [gt[0] for gt in gate_trajs],
                            scenario.pendulums)
        except TrajOptError:
            return -np.inf
        return traversal_reward(traj, z, gate_trajs, cfg.dt, scenario.time_penalty)

    if thetas is not None:
        return lambda z_flat: reward(z_flat)
    return reward


def train_planning_gaussian(scenario: Scenario, beta: float = 10.0,
                            n_samples: int = 30, max_iters: int = 30,
                            seed: int = 0):
    """Algorithm-1 protocol on the fixed planning scenario.

    The initial mean uses scenario-derived traversal times (straight-line
    distance over a nominal speed, jittered); exploration stds are 0.3 on
    both times and follow weights.
    """
    rng = np.random.default_rng(seed)
    hz = heuristic_z(scenario, scenario.theta0)
    mu = np.empty(2 * scenario.n_gates)
    mu[0::2] = np.sort(hz.times + rng.uniform(-0.2, 0.2, scenario.n_gates))
    mu[1::2] = 1.0
    init = GaussianPolicy(mu, np.diag(np.full(2 * scenario.n_gates, 0.3**2)))
    reward_fn = make_plan_reward(scenario, thetas=scenario.theta0)
    return train_gaussian(reward_fn, init, beta, n_samples, max_iters, rng,
                          dt=scenario.dt, t_max=scenario.horizon_s - scenario.dt)


def train_planning_linear(scenario: Scenario, beta: float = 3.0,
                          n_samples: int = 300, max_iters: int = 30,
                          seed: int = 0, M: int = 40, v: float = 0.5,
                          lam_reg: float = 1e-2):
    """Algorithm-2 protocol: contexts are the initial gate angles."""
    rng = np.random.default_rng(seed)
    rff = RffSpec.draw(scenario.n_gates, M=M, v=v, rng=rng)
    g0 = init_gaussian_policy(scenario.n_gates, scenario.horizon_s, rng)
    # center the initial mean on the scenario-derived heuristic times: the
    # uniform spread can start too far from the feasible schedule to recover
    g0.mu[0::2] = heuristic_z(scenario, np.zeros(scenario.n_gates)).times
    reward_fn = make_plan_reward(scenario)

    def context_sampler(r, n):
        return np.array([scenario.sample_context(r) for _ in range(n)])

    # start exploration around the Gaussian-init mean: absorb mu into W via a
    # ridge fit of the constant function s -> mu on a probe batch of contexts
    probe = context_sampler(rng, max(4 * M, 64))
    Phi = np.array([np.sin(rff.P @ s / rff.v + rff.phase) for s in probe])
    W0 = np.linalg.solve(Phi.T @ Phi + 1e-3 * np.eye(M),
                         Phi.T @ np.tile(g0.mu, (len(probe), 1)))
    init = LinearGaussianPolicy(W0, g0.Sigma, rff)
    return train_linear_gaussian(reward_fn, context_sampler, init, beta,
                                 n_samples, max_iters, rng, dt=scenario.dt,
                                 t_max=scenario.horizon_s - scenario.dt,
                                 lam_reg=lam_reg)


def heuristic_z(scenario: Scenario, thetas, v_nominal: float = 2.0) -> DecisionVars:
    """Traversal times from straight-line distance at the initial gate pose."""
    p0 = scenario.x0[0:3]
    times = []
    for theta, pp in zip(thetas, scenario.pendulums):
        d = np.linalg.norm(gate_pose(theta, 0.0, pp).p - p0)
        times.append(min(d / v_nominal, scenario.horizon_s - scenario.dt))
    z = np.empty(2 * scenario.n_gates)
    z[0::2] = times
    z[1::2] = 1.0
    return DecisionVars.repair(z, scenario.dt)


def random_z(scenario: Scenario, rng: np.random.Generator) -> DecisionVars:
    """Sample z from an untrained policy: zero-mean draws with the default
    exploration stds, projected into the validity region. Times mostly floor
    to the first control steps, so the plan never bends toward the gates."""
    z = np.empty(2 * scenario.n_gates)
    z[0::2] = rng.normal(0.0, 0.5, scenario.n_gates)
    z[1::2] = rng.normal(0.0, 0.3, scenario.n_gates)
    return DecisionVars.repair(z, scenario.dt)


def learned_z(policy: LinearGaussianPolicy, s, dt: float,
              t_max: float | None = None) -> DecisionVars:
    return DecisionVars.repair(policy.mean(np.asarray(s, dtype=float)), dt, t_max)


def eval_linear_policy(policy: LinearGaussianPolicy, scenario: Scenario,
                       n_trials: int = 100, seed: int = 0,
                       selectors=("learned", "heuristic", "random")) -> dict:
    """Table-I-style report: per-gate success rate / mean / std of the
    planning traversal error for each z selector over random contexts."""
    master = np.random.SeedSequence(seed)
    report = {}
    errors = {sel: np.empty((n_trials, scenario.n_gates)) for sel in selectors}
    for trial, child in enumerate(master.spawn(n_trials)):
        rng = np.random.default_rng(child)
        s = scenario.sample_context(rng)
        for sel in selectors:
            if sel == "learned":
                z = learned_z(policy, s, scenario.dt,
                              scenario.horizon_s - scenario.dt)
            elif sel == "heuristic":
                z = heuristic_z(scenario, s)
            elif sel == "random":
                z = random_z(scenario, rng)
            else:
                raise HarnessError(f"unknown selector {sel!r}")
            try:
                errors[sel][trial] = plan_errors(z, scenario, s)
            except TrajOptError:
                errors[sel][trial] = np.inf
    for sel in selectors:
        e = errors[sel]
        ok = e < SUCCESS_THRESHOLD
        finite = np.where(np.isfinite(e), e, np.nan)
        report[sel] = {
            "success_pct": (100.0 * ok.mean(axis=0)).tolist(),
            "mean_error": np.nanmean(finite, axis=0).tolist(),
            "std_error": np.nanstd(finite, axis=0).tolist(),
            "trials": n_trials,
        }
    return report


# ---------------------------------------------------------------------------
# closed-loop episodes
# ---------------------------------------------------------------------------

@dataclass
class EpisodeResult:
    gate_errors: np.ndarray
    success: bool
    states: np.ndarray
    inputs: np.ndarray
    controller_ms: dict
    termination: str
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "gate_errors": self.gate_errors.tolist(),
            "success": bool(self.success),
            "controller_ms": self.controller_ms,
            "termination": self.termination,
            "seed": self.seed,
            "n_steps": int(self.inputs.shape[0]),
        }


class HighMpcController:
    """High-MPC closed-loop controller: a high-level z selector feeding the
    gate-traversal MPC each control step (next gate only)."""

    def __init__(self, cfg: MpcConfig, goal: np.ndarray, z_selector=None,
                 v_nominal: float = 2.0, pass_margin: float = 0.3):
        """``z_selector(x, gate_state, dt, H) -> DecisionVars``; defaults to a
        distance/nominal-speed heuristic when none is given.

        ``pass_margin`` hands the plan off to the next target once the quad
        is within that distance of the gate plane: the traversal cost pins
        the quad to the (zero x-velocity) gate point, so without the handoff
        the controller would hover at the plane instead of crossing it.
        """
        self.mpc = MpcController(cfg, goal)
        self.cfg = cfg
        self.z_selector = z_selector
        self.v_nominal = v_nominal
        self.pass_margin = pass_margin

    def reset(self):
        self.mpc.reset()

    def _heuristic(self, x, gate_state):
        d = float(np.linalg.norm(gate_state.p - x[0:3]))
        t1 = np.clip(d / self.v_nominal, self.cfg.dt, self.cfg.H * self.cfg.dt)
        return DecisionVars([t1], [1.0])

    def command(self, x, gates, pps, next_idx):
        while (next_idx < len(gates)
               and x[0] >= pps[next_idx].anchor[0] - self.pass_margin):
            next_idx += 1
        if next_idx < len(gates):
            gate = gates[next_idx]
            if self.z_selector is None:
                z = self._heuristic(x, gate)
            else:
                z = self.z_selector(x, gate, self.cfg.dt, self.cfg.H)
            u, _ = self.mpc.step(x, z, [gate], [pps[next_idx]])
        else:
            z = DecisionVars(np.empty(0), np.empty(0))
            u, _ = self.mpc.step(x, z, [], [])
        return u


def run_episode(controller, scenario: Scenario, rng: np.random.Generator | None = None,
                thetas=None, theta_dots=None, seed: int | None = None) -> EpisodeResult:
    """Step the plant at the control rate until all gates are passed and the
    goal is reached, or the step cap triggers.

    The traversal error for gate i is the minimum distance between quad
    center and gate center over the two control steps bracketing the crossing
    of the gate plane x = anchor_x. Success requires every error below 0.5 m.
    """
    rng = rng or np.random.default_rng(seed)
    th = np.array(thetas if thetas is not None else scenario.theta0, dtype=float)
    thd = np.array(theta_dots if theta_dots is not None else scenario.theta_dot0,
                   dtype=float)
    x = scenario.x0.copy()
    n = scenario.n_gates
    errors = np.full(n, np.inf)
    crossed = np.zeros(n, dtype=bool)
    states = [x.copy()]
    inputs = []
    times_ms = []
    controller.reset()
    termination = "step_cap"
    teleport = getattr(controller, "is_teleport", False)
    dt = scenario.dt

    for _ in range(scenario.step_cap):
        gates = scenario.gates_at(th, thd)
        next_idx = int(np.sum(crossed))
        prev_x = x
        prev_gates = gates
        if teleport:
            x = controller.teleport_step(x, gates, pps=scenario.pendulums,
                                         next_idx=next_idx, dt=dt)
            inputs.append(np.zeros(4))
        else:
            t0 = time.perf_counter()
            u = controller.command(x, gates, scenario.pendulums, next_idx)
            times_ms.append(1e3 * (time.perf_counter() - t0))
            inputs.append(np.asarray(u, dtype=float))
            x = integrate_quad_array(x, inputs[-1], dt, scenario.g_z)
        if not np.all(np.isfinite(x)):
            termination = "diverged"
            break
        new_th = th.copy()
        new_thd = thd.copy()
        for i, pp in enumerate(scenario.pendulums):
            new_th[i], new_thd[i] = integrate_pendulum(th[i], thd[i], pp, dt,
                                                       scenario.g_z)
        cur_gates = scenario.gates_at(new_th, new_thd)
        for i, pp in enumerate(scenario.pendulums):
            if not crossed[i] and prev_x[0] < pp.anchor[0] <= x[0]:
                e_prev = np.linalg.norm(prev_x[0:3] - prev_gates[i].p)
                e_cur = np.linalg.norm(x[0:3] - cur_gates[i].p)
                errors[i] = min(e_prev, e_cur)
                crossed[i] = True
        th, thd = new_th, new_thd
        states.append(x.copy())
        if np.all(crossed) and np.linalg.norm(x[0:3] - scenario.goal[0:3]) < 0.5:
            termination = "goal_reached"
            break

    success = bool(np.all(crossed) and np.all(errors < SUCCESS_THRESHOLD))
    ms = np.asarray(times_ms) if times_ms else np.zeros(1)
    return EpisodeResult(
        gate_errors=errors,
        success=success,
        states=np.asarray(states),
        inputs=np.asarray(inputs) if inputs else np.zeros((0, 4)),
        controller_ms={"median": float(np.median(ms)), "max": float(np.max(ms)),
                       "mean": float(np.mean(ms))},
        termination=termination,
        seed=seed,
    )


@dataclass
class SweepGrid:
    dx_values: list
    vx_values: list
    success_rate: np.ndarray  # (len(dx), len(vx))
    mean_error: np.ndarray
    trials: int

    def aggregate_success(self) -> float:
        return float(np.mean(self.success_rate))

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["dx", "vx", "success_rate", "mean_error", "trials"])
            for i, dx in enumerate(self.dx_values):
                for j, vx in enumerate(self.vx_values):
                    w.writerow([dx, vx, self.success_rate[i, j],
                                self.mean_error[i, j], self.trials])


def sweep(controller_factories: dict, dx_values, vx_values, trials: int = 5,
          seed: int = 0, n_gates: int = 5, theta_amp: float = 0.5,
          workers: int = 1) -> dict:
    """Grid of closed-loop success rates per controller.

    ``controller_factories`` maps a name to ``f(scenario) -> controller``.
    Each trial owns its plant, solver and RNG stream (spawned from the master
    seed by cell/trial index, identical across controllers), so results are
    independent of trial execution order and of ``workers``.
    """
    master = np.random.SeedSequence(seed)
    grids = {}
    cells = [(i, j, dx, vx) for i, dx in enumerate(dx_values)
             for j, vx in enumerate(vx_values)]
    streams = master.spawn(len(cells) * trials)

    def one_trial(factory, ci, t):
        _, _, dx, vx = cells[ci]
        scenario = sweep_scenario(dx, vx, n_gates=n_gates)
        rng = np.random.default_rng(streams[ci * trials + t])
        thetas = rng.uniform(-theta_amp, theta_amp, size=n_gates)
        theta_dots = rng.uniform(-0.3, 0.3, size=n_gates)
        controller = factory(scenario)
        try:
            return run_episode(controller, scenario, rng, thetas, theta_dots)
        except (TrajOptError, ValueError):
            return None

    for name, factory in controller_factories.items():
        jobs = [(ci, t) for ci in range(len(cells)) for t in range(trials)]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda job: one_trial(factory, *job),
                                        jobs))
        else:
            results = [one_trial(factory, *job) for job in jobs]
        succ = np.zeros((len(dx_values), len(vx_values)))
        merr = np.full_like(succ, np.nan)
        for ci, (i, j, _, _) in enumerate(cells):
            ok = 0
            errs = []
            for t in range(trials):
                res = results[ci * trials + t]
                if res is not None and res.success:
                    ok += 1
                if res is not None:
                    finite = res.gate_errors[np.isfinite(res.gate_errors)]
                    errs.append(np.mean(finite) if len(finite) else np.nan)
                else:
                    errs.append(np.nan)
            succ[i, j] = ok / trials
            if np.any(np.isfinite(errs)):
                merr[i, j] = float(np.nanmean(errs))
        grids[name] = SweepGrid(list(dx_values), list(vx_values), succ, merr, trials)
    return grids


# ---------------------------------------------------------------------------
# config & provenance
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    with open(path) as f:
        cfg = yaml.safe_load(f) or {}
    if not isinstance(cfg, dict):
        raise HarnessError("config root must be a mapping")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def provenance(cfg: dict, seed: int) -> dict:
    return {"build": f"highmpc-{__version__}", "seed": seed,
            "config_hash": config_hash(cfg)}
