"""Self-supervised neural high-level policy.

A small MLP (10 -> 32 -> 32 -> 1, ReLU, softplus output) regresses the
traversal time from the observation o = x^q - x^g (quad state minus next
gate state, componentwise with canonical quaternion signs). Training data is
collected by running the Gaussian search from ``policy_search`` in the loop:
at every control step the search finds the locally optimal traversal time,
which is logged together with the observation.

The MLP and its training loop are implemented directly in numpy so the
backprop gradients can be verified against finite differences.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (gate_pose, integrate_pendulum, integrate_quad_array,
                       predict_gate_trajectory)
from .policy_search import GaussianPolicy, PolicySearchError, train_gaussian, traversal_reward
from .trajopt import DecisionVars, MpcController, TrajOptError

OBS_DIM = 10
HIDDEN = (32, 32)


class NeuralPolicyError(ValueError):
    pass


def observation(x_quad: np.ndarray, gate_state) -> np.ndarray:
    """o = x^q - x^g, componentwise (both quaternions already canonical)."""
    o = np.asarray(x_quad, dtype=float) - gate_state.as_array()
    if not np.all(np.isfinite(o)):
        raise NeuralPolicyError("non-finite observation")
    return o


@dataclass
class MlpParams:
    """Weights, biases and input-standardization statistics of the MLP."""

    weights: list  # [(32,10), (32,32), (1,32)]
    biases: list  # [(32,), (32,), (1,)]
    in_mean: np.ndarray = field(default_factory=lambda: np.zeros(OBS_DIM))
    in_std: np.ndarray = field(default_factory=lambda: np.ones(OBS_DIM))

    def __post_init__(self):
        self.weights = [np.asarray(W, dtype=float) for W in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        self.in_mean = np.asarray(self.in_mean, dtype=float)
        self.in_std = np.asarray(self.in_std, dtype=float)

    @classmethod
    def init(cls, rng: np.random.Generator, hidden=HIDDEN) -> "MlpParams":
        dims = (OBS_DIM, *hidden, 1)
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    def copy(self) -> "MlpParams":
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases],
                         self.in_mean.copy(), self.in_std.copy())

    def to_dict(self) -> dict:
        return {
            "arch": [W.shape[1] for W in self.weights] + [1],
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "in_mean": self.in_mean.tolist(),
            "in_std": self.in_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        return cls([np.asarray(W) for W in d["weights"]],
                   [np.asarray(b) for b in d["biases"]],
                   np.asarray(d["in_mean"]), np.asarray(d["in_std"]))

    def save(self, path, seed=None):
        d = self.to_dict()
        if seed is not None:
            d["seed"] = seed
        with open(path, "w") as f:
            json.dump(d, f)

    @classmethod
    def load(cls, path) -> "MlpParams":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _softplus(a):
    return np.where(a > 30, a, np.log1p(np.exp(np.minimum(a, 30))))


def _forward_raw(p: MlpParams, O_std: np.ndarray):
    """Forward pass on standardized inputs; returns output and layer caches."""
    caches = []
    act = O_std
    for W, b in zip(p.weights[:-1], p.biases[:-1]):
        pre = act @ W.T + b
        caches.append((act, pre))
        act = np.maximum(pre, 0.0)
    pre = act @ p.weights[-1].T + p.biases[-1]
    caches.append((act, pre))
    return _softplus(pre[:, 0]), caches


def mlp_forward(p: MlpParams, o: np.ndarray) -> float:
    """Predicted traversal time (softplus keeps it positive)."""
    o = np.atleast_2d(np.asarray(o, dtype=float))
    O_std = (o - p.in_mean) / p.in_std
    out, _ = _forward_raw(p, O_std)
    return float(out[0]) if out.shape[0] == 1 else out


def mlp_predict(p: MlpParams, O: np.ndarray) -> np.ndarray:
    O = np.atleast_2d(np.asarray(O, dtype=float))
    out, _ = _forward_raw(p, (O - p.in_mean) / p.in_std)
    return out


def mlp_loss_and_grads(p: MlpParams, O_std: np.ndarray, y: np.ndarray):
    """Mean squared error and its gradients w.r.t. all weights and biases."""
    n = O_std.shape[0]
    out, caches = _forward_raw(p, O_std)
    err = out - y
    loss = float(np.mean(err**2))
    # d loss / d pre-activation of the output (softplus' = sigmoid)
    pre_out = caches[-1][1][:, 0]
    sig = 1.0 / (1.0 + np.exp(-np.clip(pre_out, -500, 500)))
    delta = (2.0 / n) * err * sig
    gW, gb = [None] * len(p.weights), [None] * len(p.biases)
    delta = delta[:, None]
    for layer in range(len(p.weights) - 1, -1, -1):
        act_in, _ = caches[layer]
        gW[layer] = delta.T @ act_in
        gb[layer] = np.sum(delta, axis=0)
        if layer > 0:
            delta = (delta @ p.weights[layer]) * (caches[layer - 1][1] > 0)
    return loss, gW, gb


@dataclass
class Dataset:
    """Observation/traversal-time pairs with episode bookkeeping."""

    obs: np.ndarray
    t_tra: np.ndarray
    episode: np.ndarray
    step: np.ndarray

    def __post_init__(self):
        self.obs = np.atleast_2d(np.asarray(self.obs, dtype=float))
        self.t_tra = np.atleast_1d(np.asarray(self.t_tra, dtype=float))
        self.episode = np.atleast_1d(np.asarray(self.episode, dtype=int))
        self.step = np.atleast_1d(np.asarray(self.step, dtype=int))
        if np.any(~np.isfinite(self.obs)) or np.any(~np.isfinite(self.t_tra)):
            raise NeuralPolicyError("dataset contains non-finite values")
        if np.any(self.t_tra <= 0):
            raise NeuralPolicyError("traversal times must be positive")

    def __len__(self):
        return len(self.t_tra)

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow([f"o{i}" for i in range(OBS_DIM)] + ["t_tra", "episode", "step"])
            for i in range(len(self)):
                w.writerow(list(self.obs[i]) + [self.t_tra[i], self.episode[i], self.step[i]])

    @classmethod
    def read_csv(cls, path) -> "Dataset":
        obs, t, ep, st = [], [], [], []
        with open(path, newline="") as f:
            r = csv.reader(f)
            next(r)
            for row in r:
                obs.append([float(v) for v in row[:OBS_DIM]])
                t.append(float(row[OBS_DIM]))
                ep.append(int(row[OBS_DIM + 1]))
                st.append(int(row[OBS_DIM + 2]))
        return cls(np.array(obs), np.array(t), np.array(ep), np.array(st))


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch: int = 64
    epochs: int = 100
    momentum: float = 0.9
    val_split: float = 0.1
    patience: int = 10
    seed: int = 0


def train_mlp(data: Dataset, cfg: TrainConfig | None = None):
    """Mini-batch SGD with momentum on the MSE; returns (params, loss curve).

    Deterministic given the seed. Inputs are standardized by the training
    split's mean/std, which are stored inside the returned parameters. Early
    stopping tracks the validation loss; the best snapshot is returned.
    """
    cfg = cfg or TrainConfig()
    if len(data) == 0:
        raise NeuralPolicyError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    perm = rng.permutation(n)
    n_val = max(1, int(round(cfg.val_split * n))) if n > 1 else 0
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0:
        train_idx = perm
    O_train, y_train = data.obs[train_idx], data.t_tra[train_idx]
    O_val, y_val = data.obs[val_idx], data.t_tra[val_idx]

    mean = O_train.mean(axis=0)
    std = np.maximum(O_train.std(axis=0), 1e-8)
    p = MlpParams.init(rng)
    p.in_mean, p.in_std = mean, std
    Os_train = (O_train - mean) / std
    Os_val = (O_val - mean) / std if n_val else Os_train

    vW = [np.zeros_like(W) for W in p.weights]
    vb = [np.zeros_like(b) for b in p.biases]
    curve = {"epoch": [], "train_loss": [], "val_loss": []}
    best = p.copy()
    best_val = np.inf
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_idx))
        for start in range(0, len(order), cfg.batch):
            idx = order[start:start + cfg.batch]
            loss, gW, gb = mlp_loss_and_grads(p, Os_train[idx], y_train[idx])
            if not np.isfinite(loss):
                return best, curve  # diverged: keep last finite snapshot
            for i in range(len(p.weights)):
                vW[i] = cfg.momentum * vW[i] - cfg.lr * gW[i]
                vb[i] = cfg.momentum * vb[i] - cfg.lr * gb[i]
                p.weights[i] += vW[i]
                p.biases[i] += vb[i]
        train_loss, _, _ = mlp_loss_and_grads(p, Os_train, y_train)
        val_y = y_val if n_val else y_train
        val_out, _ = _forward_raw(p, Os_val)
        val_loss = float(np.mean((val_out - val_y) ** 2))
        curve["epoch"].append(epoch)
        curve["train_loss"].append(train_loss)
        curve["val_loss"].append(val_loss)
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best = p.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best, curve


@dataclass
class SearchConfig:
    """Budget of the per-step Gaussian search used during data collection."""

    beta: float = 3.0
    n_samples: int = 10
    iters_cold: int = 5
    iters_warm: int = 2
    time_std: float = 0.4
    warm_std: float = 0.15
    lam: float = 0.1


def search_traversal_time(mpc: MpcController, x: np.ndarray, gate_state, pp,
                          cfg: SearchConfig, rng: np.random.Generator,
                          mu0: float | None = None) -> float:
    """Algorithm-1 search over the single traversal time at the current state.

    Warm-started from ``mu0`` (e.g. the previous step's optimum minus dt)
    when given; returns the converged mean traversal time.
    """
    dt = mpc.cfg.dt
    H = mpc.cfg.H
    gate_traj = None

    def reward_fn(z_flat):
        nonlocal gate_traj
        t1 = float(np.clip(z_flat[0], dt, H * dt))
        z = DecisionVars([t1], [1.0])
        try:
            traj = mpc.plan(x, z, [gate_state], [pp])
        except TrajOptError:
            return -np.inf
        if gate_traj is None:
            gate_traj = predict_gate_trajectory(gate_state, pp, H, dt, mpc.cfg.g_z)
        return traversal_reward(traj, z, [gate_traj], dt, cfg.lam)

    if mu0 is None:
        mu = np.array([0.5 * H * dt])
        var = np.array([[cfg.time_std**2]])
        iters = cfg.iters_cold
    else:
        mu = np.array([np.clip(mu0, dt, H * dt)])
        var = np.array([[cfg.warm_std**2]])
        iters = cfg.iters_warm
    init = GaussianPolicy(mu, var)
    policy, _ = train_gaussian(lambda zf: reward_fn(zf), init, cfg.beta,
                               cfg.n_samples, iters, rng, dt=None, tol=0.0)
    return float(np.clip(policy.mu[0], dt, H * dt))


def collect_dataset(scenario, n_target: int, search_cfg: SearchConfig | None = None,
                    rng: np.random.Generator | None = None) -> Dataset:
    """Run the search oracle in closed loop and log (observation, t*) pairs.

    ``scenario`` must provide: ``mpc_config()``, ``goal`` (10-vector),
    ``pendulums`` (one entry: the swinging gate), ``reset(rng)`` returning
    (quad state 10-vector, gate theta, gate theta_dot), ``step_cap``, and
    ``g_z``. Episodes end when the quad crosses the gate plane or on the
    step cap; states where the search fails are skipped and counted.
    """
    search_cfg = search_cfg or SearchConfig()
    rng = rng or np.random.default_rng()
    pp = scenario.pendulums[0]
    cfg = scenario.mpc_config()
    obs, ts, eps, sts = [], [], [], []
    skipped = 0
    episode = 0
    while len(ts) < n_target:
        x, theta, theta_dot = scenario.reset(rng)
        mpc = MpcController(cfg, scenario.goal)
        mu_prev = None
        for step in range(scenario.step_cap):
            gate = gate_pose(theta, theta_dot, pp)
            try:
                t_star = search_traversal_time(mpc, x, gate, pp, search_cfg, rng,
                                               mu0=mu_prev)
                z = DecisionVars([t_star], [1.0])
                u, _ = mpc.step(x, z, [gate], [pp])
            except (TrajOptError, PolicySearchError):
                skipped += 1
                break
            obs.append(observation(x, gate))
            ts.append(t_star)
            eps.append(episode)
            sts.append(step)
            x = integrate_quad_array(x, u, cfg.dt, scenario.g_z)
            theta, theta_dot = integrate_pendulum(theta, theta_dot, pp, cfg.dt,
                                                  scenario.g_z)
            mu_prev = max(t_star - cfg.dt, cfg.dt)
            if x[0] >= pp.anchor[0]:  # crossed the gate plane
                break
            if len(ts) >= n_target:
                break
        episode += 1
    data = Dataset(np.array(obs), np.array(ts), np.array(eps), np.array(sts))
    data.skipped = skipped
    return data


class NeuralHighMpcPolicy:
    """Closed-loop z-selector: z = [softplus MLP output] for the next gate."""

    def __init__(self, params: MlpParams):
        self.params = params

    def decide(self, x: np.ndarray, gate_state, dt: float, H: int) -> DecisionVars:
        t1 = float(np.clip(mlp_forward(self.params, observation(x, gate_state)),
                           dt, H * dt))
        return DecisionVars([t1], [1.0])
