"""Parameterized gate-traversal cost and the fixed-horizon trajectory solver.

The solver is a Gauss-Newton sequential quadratic method in condensed
(single-shooting) form: states are eliminated by an exact RK4 rollout, the
stage-wise quadratic subproblem is solved by a Riccati backward pass with a
per-stage box-QP enforcing the input bounds, followed by a clamped
line-search forward pass. Dynamics defects are zero by construction.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import _core
from .dynamics import GRAVITY, GateState, PendulumParams, U_DIM, X_DIM, predict_gate_trajectory


class TrajOptError(ValueError):
    pass


@dataclass
class DecisionVars:
    """High-level MPC parameters: per-gate traversal times and follow weights."""

    times: np.ndarray
    gammas: np.ndarray
    clamped: bool = False

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.gammas = np.atleast_1d(np.asarray(self.gammas, dtype=float))
        if self.times.shape != self.gammas.shape:
            raise TrajOptError("times and gammas must have equal length")
        if np.any(self.times <= 0) or np.any(np.diff(self.times) <= 0):
            raise TrajOptError(f"traversal times must be positive and strictly increasing: {self.times}")
        if np.any(self.gammas < 0):
            raise TrajOptError(f"follow weights must be nonnegative: {self.gammas}")

    @property
    def n_gates(self) -> int:
        return len(self.times)

    @classmethod
    def from_flat(cls, z: np.ndarray) -> "DecisionVars":
        z = np.asarray(z, dtype=float)
        return cls(times=z[0::2], gammas=z[1::2])

    def as_flat(self) -> np.ndarray:
        z = np.empty(2 * self.n_gates)
        z[0::2] = self.times
        z[1::2] = self.gammas
        return z

    @classmethod
    def repair(cls, z: np.ndarray, dt: float, t_max: float | None = None) -> "DecisionVars":
        """Project a raw sample into the validity region.

        Times are sorted and floored at dt (consecutive times separated by at
        least dt); weights are clipped at zero. With ``t_max`` given, times
        are also clamped into the planning horizon (keeping dt separation).
        """
        z = np.asarray(z, dtype=float)
        t = np.sort(z[0::2])
        g = np.clip(z[1::2], 0.0, None)
        t = np.maximum(t, dt)
        for i in range(1, len(t)):
            t[i] = max(t[i], t[i - 1] + dt)
        if t_max is not None and len(t):
            t[-1] = min(t[-1], t_max)
            for i in range(len(t) - 2, -1, -1):
                t[i] = min(t[i], t[i + 1] - dt)
            if t[0] < dt:
                raise TrajOptError("horizon too short for the gate count")
        changed = not (np.array_equal(t, z[0::2]) and np.array_equal(g, z[1::2]))
        return cls(times=t, gammas=g, clamped=changed)


def _default_qp():
    return np.array([100.0, 100, 100, 0, 0, 0, 0, 10, 10, 10])


@dataclass
class CostWeights:
    """Diagonal weights of the gate-traversal cost (non-paper defaults)."""

    Q_p: np.ndarray = field(default_factory=_default_qp)
    Q_f: np.ndarray = field(default_factory=_default_qp)
    Q_goal: np.ndarray = field(default_factory=_default_qp)
    Q_u: np.ndarray = field(default_factory=lambda: np.array([0.1, 0.1, 0.1, 0.1]))
    alpha: float = 10.0
    u_r: np.ndarray = field(default_factory=lambda: np.array([GRAVITY, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        for name in ("Q_p", "Q_f", "Q_goal", "Q_u", "u_r"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.Q_p < 0) or np.any(self.Q_f < 0) or np.any(self.Q_goal < 0) or np.any(self.Q_u < 0):
            raise TrajOptError("cost weights must be nonnegative")
        if self.alpha <= 0:
            raise TrajOptError("alpha must be positive")


def stage_schedule(z: DecisionVars, H: int, dt: float, alpha: float = 10.0):
    """Per-stage gate-pass indicators and gate-follow weights.

    Returns (P, W, beyond): P[h, i] is 1 exactly at the traversal node of
    gate i (all-zero when the time falls beyond the horizon, flagged in
    ``beyond``), W[h, i] = exp(-alpha (h dt - t_i)^2) gamma_i.
    """
    if H < 1 or dt <= 0:
        raise TrajOptError("H must be >= 1 and dt > 0")
    n = z.n_gates
    P = np.zeros((H, n))
    W = np.empty((H, n))
    beyond = np.zeros(n, dtype=bool)
    hs = np.arange(H) * dt
    for i in range(n):
        node = int(np.floor(z.times[i] / dt))
        if node <= H - 1:
            P[node, i] = 1.0
        else:
            beyond[i] = True
        W[:, i] = np.exp(-alpha * (hs - z.times[i]) ** 2) * z.gammas[i]
    return P, W, beyond


class QuadraticStageCost:
    """Stage-wise diagonal quadratic cost with analytic derivatives.

    stage h:   x^T diag(wx_h) x - 2 bx_h . x + c0_h + (u - u_r)^T diag(wu) (u - u_r)
    terminal:  (x - goal)^T diag(wg) (x - goal)

    ``wx``/``bx``/``c0`` encode sums of (x - r)^T Q (x - r) terms with
    different references r per gate.
    """

    def __init__(self, wx, bx, c0, wu, u_r, wg, goal, g_z=GRAVITY):
        self.wx = np.asarray(wx, dtype=float)
        self.bx = np.asarray(bx, dtype=float)
        self.c0 = np.asarray(c0, dtype=float)
        self.wu = np.asarray(wu, dtype=float)
        self.u_r = np.asarray(u_r, dtype=float)
        self.wg = np.asarray(wg, dtype=float)
        self.goal = np.asarray(goal, dtype=float)
        self.g_z = g_z
        self.H = self.wx.shape[0]
        if self.bx.shape != (self.H, X_DIM) or self.c0.shape != (self.H,):
            raise TrajOptError("inconsistent cost term dimensions")

    @classmethod
    def from_terms(cls, refs, coefs, Qs, wu, u_r, wg, goal, H, g_z=GRAVITY):
        """Accumulate weighted quadratic tracking terms.

        refs: list of (H, 10) reference arrays; coefs: list of (H,) weights;
        Qs: list of (10,) diagonal weight vectors, one triple per term.
        """
        wx = np.zeros((H, X_DIM))
        bx = np.zeros((H, X_DIM))
        c0 = np.zeros(H)
        for r, c, q in zip(refs, coefs, Qs):
            r = np.asarray(r, dtype=float)
            c = np.asarray(c, dtype=float)
            q = np.asarray(q, dtype=float)
            if r.shape != (H, X_DIM) or c.shape != (H,):
                raise TrajOptError("reference/coefficient shape mismatch")
            wx += c[:, None] * q[None, :]
            bx += c[:, None] * (q[None, :] * r)
            c0 += c * np.sum(q[None, :] * r * r, axis=1)
        return cls(wx, bx, c0, wu, u_r, wg, goal, g_z)

    # -- evaluation -------------------------------------------------------
    def stage_cost(self, x, u, h) -> float:
        dx = self.wx[h] * x
        du = u - self.u_r
        return float(x @ dx - 2 * self.bx[h] @ x + self.c0[h] + du @ (self.wu * du))

    def terminal_cost(self, x) -> float:
        d = x - self.goal
        return float(d @ (self.wg * d))

    def stage_costs(self, X, U) -> np.ndarray:
        Xs = X[: self.H]
        dU = U - self.u_r
        return (
            np.sum(Xs * (self.wx * Xs), axis=1)
            - 2 * np.sum(self.bx * Xs, axis=1)
            + self.c0
            + np.sum(dU * (self.wu * dU), axis=1)
        )

    def total(self, X, U) -> float:
        return float(np.sum(self.stage_costs(X, U)) + self.terminal_cost(X[self.H]))

    # -- derivatives ------------------------------------------------------
    def grad_x(self, X) -> np.ndarray:
        return 2 * (self.wx * X[: self.H] - self.bx)

    def grad_u(self, U) -> np.ndarray:
        return 2 * self.wu * (U - self.u_r)

    def hess_x_diag(self) -> np.ndarray:
        return 2 * self.wx

    def hess_u_diag(self) -> np.ndarray:
        return 2 * self.wu

    def grad_terminal(self, x) -> np.ndarray:
        return 2 * self.wg * (x - self.goal)

    def hess_terminal_diag(self) -> np.ndarray:
        return 2 * self.wg


def build_cost(z: DecisionVars, gate_trajs: list[list[GateState]], goal: np.ndarray,
               w: CostWeights, H: int, dt: float, g_z: float = GRAVITY) -> QuadraticStageCost:
    """Gate-pass + gate-follow + terminal + action cost for decision variables z.

    The reference for gate i (both terms) is the predicted gate state at its
    traversal node, constant over the horizon. Traversal times beyond the
    horizon drop the gate-pass term; the follow weights still apply with the
    last predicted gate state as reference.
    """
    n = z.n_gates
    if len(gate_trajs) != n:
        raise TrajOptError(f"expected {n} gate trajectories, got {len(gate_trajs)}")
    P, W, _ = stage_schedule(z, H, dt, w.alpha)
    refs, coefs, Qs = [], [], []
    for i in range(n):
        traj = gate_trajs[i]
        if len(traj) < H + 1:
            raise TrajOptError("gate trajectory shorter than horizon")
        node = min(int(np.floor(z.times[i] / dt)), len(traj) - 1)
        ref = np.tile(traj[node].as_array(), (H, 1))
        refs.append(ref)
        coefs.append(P[:, i])
        Qs.append(w.Q_p)
        refs.append(ref)
        coefs.append(W[:, i] * (1 - P[:, i]))
        Qs.append(w.Q_f)
    return QuadraticStageCost.from_terms(refs, coefs, Qs, w.Q_u, w.u_r, w.Q_goal, goal, H, g_z)


def tracking_cost(gate_refs: np.ndarray, Q: np.ndarray, goal: np.ndarray, w: CostWeights,
                  H: int, g_z: float = GRAVITY) -> QuadraticStageCost:
    """Time-varying reference tracking cost (used by the standard-MPC baseline)."""
    gate_refs = np.asarray(gate_refs, dtype=float)[:H]
    return QuadraticStageCost.from_terms(
        [gate_refs], [np.ones(H)], [np.asarray(Q, dtype=float)],
        w.Q_u, w.u_r, w.Q_goal, goal, H, g_z,
    )


@dataclass
class InputBounds:
    lower: np.ndarray = field(default_factory=lambda: np.array([2.0, -3.0, -3.0, -3.0]))
    upper: np.ndarray = field(default_factory=lambda: np.array([20.0, 3.0, 3.0, 3.0]))

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if np.any(self.lower >= self.upper):
            raise TrajOptError("empty input box")

    def clip(self, u):
        return np.clip(u, self.lower, self.upper)


@dataclass
class SolverParams:
    max_iters: int = 100
    tol_grad: float = 1e-4
    tol_step: float = 1e-6
    armijo: float = 1e-4
    ls_steps: int = 6
    reg_init: float = 1.0
    reg_up: float = 4.0
    reg_down: float = 2.0
    reg_min: float = 1e-9
    reg_max: float = 1e10


@dataclass
class Trajectory:
    states: np.ndarray
    inputs: np.ndarray
    stage_costs: np.ndarray
    total_cost: float
    solve_stats: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "states": self.states.tolist(),
                "inputs": self.inputs.tolist(),
                "stage_costs": self.stage_costs.tolist(),
                "total_cost": self.total_cost,
                "solve_stats": self.solve_stats,
            }
        )

    @classmethod
    def from_json(cls, s: str) -> "Trajectory":
        d = json.loads(s)
        return cls(
            states=np.asarray(d["states"]),
            inputs=np.asarray(d["inputs"]),
            stage_costs=np.asarray(d["stage_costs"]),
            total_cost=d["total_cost"],
            solve_stats=d["solve_stats"],
        )


def solve_trajectory(x_init: np.ndarray, cost: QuadraticStageCost, bounds: InputBounds,
                     H: int, dt: float, warm_start: Trajectory | None = None,
                     params: SolverParams | None = None) -> Trajectory:
    """Locally optimal input trajectory under box bounds.

    The heavy lifting happens in the kernel backend's ``solve_ocp`` (Riccati
    backward pass with a per-stage box-QP for the input bounds, line-search
    forward pass, projected-gradient termination). Deterministic given
    identical inputs; returns the best feasible iterate flagged non-converged
    on iteration exhaustion.
    """
    params = params or SolverParams()
    x_init = np.ascontiguousarray(x_init, dtype=float)
    t0 = time.perf_counter()

    if warm_start is not None and warm_start.inputs.shape == (H, U_DIM):
        U0 = warm_start.inputs
    else:
        U0 = np.tile(cost.u_r, (H, 1))
    U0 = np.ascontiguousarray(bounds.clip(U0))

    X, U, J, iters, grad_norm, step_norm, converged = _core.solve_ocp(
        x_init, U0,
        np.ascontiguousarray(cost.wx), np.ascontiguousarray(cost.bx),
        np.ascontiguousarray(cost.c0), np.ascontiguousarray(cost.wu),
        np.ascontiguousarray(cost.u_r), np.ascontiguousarray(cost.wg),
        np.ascontiguousarray(cost.goal), dt, cost.g_z,
        bounds.lower, bounds.upper,
        params.max_iters, params.tol_grad, params.tol_step, params.armijo,
        params.ls_steps, params.reg_init, params.reg_up, params.reg_down,
        params.reg_min, params.reg_max,
    )
    X = np.asarray(X)
    U = np.asarray(U)
    if not np.isfinite(J):
        raise TrajOptError("non-finite rollout from initial guess")

    stats = {
        "iterations": int(iters),
        "converged": bool(converged),
        "grad_norm": float(grad_norm),
        "step_norm": float(step_norm if np.isfinite(step_norm) else -1.0),
        "max_defect": 0.0,  # states come from an exact rollout
        "wall_time": time.perf_counter() - t0,
    }
    return Trajectory(
        states=X,
        inputs=U,
        stage_costs=cost.stage_costs(X, U),
        total_cost=float(J),
        solve_stats=stats,
    )


@dataclass
class MpcConfig:
    horizon_s: float = 3.0
    dt: float = 0.05
    weights: CostWeights = field(default_factory=CostWeights)
    bounds: InputBounds = field(default_factory=InputBounds)
    solver: SolverParams = field(default_factory=SolverParams)
    g_z: float = GRAVITY

    @property
    def H(self) -> int:
        return int(round(self.horizon_s / self.dt))


class MpcController:
    """Receding-horizon wrapper: build the cost for the given decision
    variables, solve, return the first input. Warm starts from the previous
    solution shifted by one stage."""

    def __init__(self, cfg: MpcConfig, goal: np.ndarray):
        self.cfg = cfg
        self.goal = np.asarray(goal, dtype=float)
        self._warm: Trajectory | None = None
        self._last_u: np.ndarray | None = None

    def reset(self):
        self._warm = None
        self._last_u = None

    def _shifted_warm_start(self) -> Trajectory | None:
        if self._warm is None:
            return None
        U = np.vstack([self._warm.inputs[1:], self._warm.inputs[-1]])
        return Trajectory(self._warm.states, U, self._warm.stage_costs,
                          self._warm.total_cost, self._warm.solve_stats)

    def plan(self, x: np.ndarray, z: DecisionVars, gates: list[GateState],
             pps: list[PendulumParams], warm_start: Trajectory | None = None) -> Trajectory:
        cfg = self.cfg
        H = cfg.H
        gate_trajs = [predict_gate_trajectory(g, pp, H, cfg.dt, cfg.g_z)
                      for g, pp in zip(gates, pps)]
        cost = build_cost(z, gate_trajs, self.goal, cfg.weights, H, cfg.dt, cfg.g_z)
        return solve_trajectory(np.asarray(x, dtype=float), cost, cfg.bounds, H, cfg.dt,
                                warm_start=warm_start, params=cfg.solver)

    def step(self, x: np.ndarray, z: DecisionVars, gates: list[GateState],
             pps: list[PendulumParams]) -> tuple[np.ndarray, Trajectory]:
        try:
            traj = self.plan(x, z, gates, pps, warm_start=self._shifted_warm_start())
        except TrajOptError:
            if self._last_u is None:
                raise
            fallback = Trajectory(np.tile(x, (2, 1)), self._last_u[None, :],
                                  np.zeros(1), np.nan, {"converged": False, "fallback": True})
            return self._last_u.copy(), fallback
        self._warm = traj
        self._last_u = traj.inputs[0].copy()
        return traj.inputs[0].copy(), traj
