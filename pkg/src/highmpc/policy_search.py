"""Episode-based MC-EM policy search over the MPC's high-level parameters.

E-step: exponentiate episode rewards into sample weights d = exp(beta * R).
M-step: closed-form weighted maximum-likelihood fit of the policy — a plain
Gaussian over the decision variables, or a contextual linear-Gaussian on top
of random Fourier features of the context.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .trajopt import DecisionVars

SIGMA_MIN = 1e-6  # exploration floor on covariance diagonals
RIDGE_DEFAULT = 1e-5
TIME_PENALTY_DEFAULT = 0.1


class PolicySearchError(ValueError):
    pass


@dataclass
class GaussianPolicy:
    """z ~ N(mu, Sigma) over the flattened decision variables."""

    mu: np.ndarray
    Sigma: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        if self.Sigma.shape != (len(self.mu), len(self.mu)):
            raise PolicySearchError("mean/covariance dimension mismatch")
        if np.any(np.diag(self.Sigma) <= 0):
            raise PolicySearchError("covariance diagonal must be positive")
        if np.max(np.abs(self.Sigma - self.Sigma.T)) > 1e-10:
            raise PolicySearchError("covariance must be symmetric")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.multivariate_normal(self.mu, self.Sigma, size=n, method="cholesky")

    def to_dict(self) -> dict:
        return {"type": "gaussian", "mu": self.mu.tolist(), "Sigma": self.Sigma.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianPolicy":
        return cls(np.asarray(d["mu"]), np.asarray(d["Sigma"]))


@dataclass
class RffSpec:
    """Random Fourier feature map: phi_i(s) = sin(sum_j P_ij s_j / v + p_i)."""

    P: np.ndarray
    phase: np.ndarray
    v: float = 0.1

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.phase = np.atleast_1d(np.asarray(self.phase, dtype=float))
        if self.P.shape[0] != len(self.phase):
            raise PolicySearchError("projection/phase dimension mismatch")
        if self.v <= 0:
            raise PolicySearchError("bandwidth must be positive")

    @property
    def M(self) -> int:
        return self.P.shape[0]

    @classmethod
    def draw(cls, n_context: int, M: int = 40, v: float = 0.1,
             rng: np.random.Generator | None = None) -> "RffSpec":
        rng = rng or np.random.default_rng()
        return cls(P=rng.standard_normal((M, n_context)),
                   phase=rng.uniform(-np.pi, np.pi, size=M), v=v)

    def to_dict(self) -> dict:
        return {"P": self.P.tolist(), "phase": self.phase.tolist(), "v": self.v}

    @classmethod
    def from_dict(cls, d: dict) -> "RffSpec":
        return cls(np.asarray(d["P"]), np.asarray(d["phase"]), d["v"])


@dataclass
class LinearGaussianPolicy:
    """z ~ N(W^T phi(s), Sigma) with random Fourier features phi."""

    W: np.ndarray  # (M, z-dim)
    Sigma: np.ndarray
    rff: RffSpec
    degenerate: bool = False

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        self.Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        if self.W.shape[0] != self.rff.M:
            raise PolicySearchError("weight rows must match feature dimension")
        if self.Sigma.shape != (self.W.shape[1], self.W.shape[1]):
            raise PolicySearchError("covariance must match z dimension")
        if np.max(np.abs(self.Sigma - self.Sigma.T)) > 1e-10:
            raise PolicySearchError("covariance must be symmetric")

    def mean(self, s: np.ndarray) -> np.ndarray:
        return self.W.T @ rff_features(s, self.rff)

    def sample(self, rng: np.random.Generator, s: np.ndarray) -> np.ndarray:
        return rng.multivariate_normal(self.mean(s), self.Sigma, method="cholesky")

    def to_dict(self) -> dict:
        return {"type": "linear_gaussian", "W": self.W.tolist(),
                "Sigma": self.Sigma.tolist(), "rff": self.rff.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearGaussianPolicy":
        return cls(np.asarray(d["W"]), np.asarray(d["Sigma"]), RffSpec.from_dict(d["rff"]))


def save_policy(policy, path, seed=None):
    d = policy.to_dict()
    if seed is not None:
        d["seed"] = seed
    with open(path, "w") as f:
        json.dump(d, f)


def load_policy(path):
    with open(path) as f:
        d = json.load(f)
    if d["type"] == "gaussian":
        return GaussianPolicy.from_dict(d)
    return LinearGaussianPolicy.from_dict(d)


@dataclass
class EpisodeBatch:
    """One iteration's samples: decision variables, rewards, E-step weights."""

    Z: np.ndarray
    rewards: np.ndarray
    weights: np.ndarray
    contexts: np.ndarray | None = None

    def __post_init__(self):
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        self.rewards = np.atleast_1d(np.asarray(self.rewards, dtype=float))
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        n = self.Z.shape[0]
        if len(self.rewards) != n or len(self.weights) != n:
            raise PolicySearchError("batch length mismatch")
        if np.any(self.weights < 0) or not np.any(self.weights > 0):
            raise PolicySearchError("weights must be nonnegative with positive total")
        if self.contexts is not None:
            self.contexts = np.atleast_2d(np.asarray(self.contexts, dtype=float))
            if self.contexts.shape[0] != n:
                raise PolicySearchError("context count mismatch")


def traversal_reward(traj, z: DecisionVars, gate_trajs, dt: float,
                     lam: float = TIME_PENALTY_DEFAULT) -> float:
    """R = -sum_i ||p_q[h_i] - p_g[h_i]|| - lam * sum_i t_i.

    h_i = floor(t_i / dt). A traversal node outside the planned horizon (or
    the predicted gate trajectory) makes the episode non-viable: -inf.
    """
    H = traj.inputs.shape[0]
    R = 0.0
    for i in range(z.n_gates):
        h = int(np.floor(z.times[i] / dt))
        if h > H or h >= len(gate_trajs[i]):
            return -np.inf
        p_q = traj.states[h, 0:3]
        p_g = gate_trajs[i][h].p
        R -= float(np.linalg.norm(p_q - p_g))
    R -= lam * float(np.sum(z.times))
    return R


def exp_transform(rewards: np.ndarray, beta: float) -> np.ndarray:
    """d_i = exp(beta * (R_i - max_j R_j)).

    The max shift guards against overflow; it rescales every weight by the
    same factor, which cancels in both closed-form policy updates.
    """
    if beta <= 0:
        raise PolicySearchError(f"beta must be positive, got {beta}")
    rewards = np.asarray(rewards, dtype=float)
    rmax = np.max(rewards)
    if not np.isfinite(rmax):
        raise PolicySearchError("no viable samples (all rewards -inf)")
    return np.exp(beta * (rewards - rmax))


def _unbiased_denominator(d: np.ndarray) -> float:
    s = float(np.sum(d))
    return (s * s - float(np.sum(d * d))) / s


def update_gaussian(batch: EpisodeBatch, sigma_min: float = SIGMA_MIN) -> GaussianPolicy:
    """Weighted-MLE Gaussian update with unbiased covariance normalization.

    mu = sum(d z) / sum(d);  Sigma = sum(d (z-mu)(z-mu)^T) / Y,
    Y = ((sum d)^2 - sum d^2) / sum d.  A diagonal floor keeps exploration alive.
    """
    if batch.Z.shape[0] < 2:
        raise PolicySearchError("need at least 2 samples")
    d = batch.weights
    Z = batch.Z
    mu = d @ Z / np.sum(d)
    Y = _unbiased_denominator(d)
    dz = Z - mu
    degenerate = Y <= 1e-12
    if degenerate:
        Sigma = np.zeros((Z.shape[1], Z.shape[1]))
    else:
        Sigma = (d[:, None] * dz).T @ dz / Y
    Sigma = 0.5 * (Sigma + Sigma.T) + sigma_min * np.eye(Z.shape[1])
    return GaussianPolicy(mu, Sigma, degenerate=degenerate)


def rff_features(s: np.ndarray, rff: RffSpec) -> np.ndarray:
    """phi(s) = sin(P s / v + p), componentwise in [-1, 1]."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    return np.sin(rff.P @ s / rff.v + rff.phase)


def update_linear_gaussian(batch: EpisodeBatch, rff: RffSpec,
                           lam_reg: float = RIDGE_DEFAULT,
                           sigma_min: float = SIGMA_MIN) -> LinearGaussianPolicy:
    """Weighted ridge regression in feature space plus residual covariance.

    W = (Phi^T D Phi + lam I)^{-1} Phi^T D Z;
    Sigma = sum(d (z - W^T phi)(z - W^T phi)^T) / Y + floor.
    """
    if batch.contexts is None:
        raise PolicySearchError("contextual update requires contexts")
    if lam_reg <= 0:
        raise PolicySearchError("ridge parameter must be positive")
    d = batch.weights
    Z = batch.Z
    Phi = np.array([rff_features(s, rff) for s in batch.contexts])
    G = Phi.T @ (d[:, None] * Phi) + lam_reg * np.eye(rff.M)
    cond = np.linalg.cond(G)
    if cond > 1e12:
        raise PolicySearchError(f"normal matrix ill-conditioned (cond ~ {cond:.2e})")
    W = np.linalg.solve(G, Phi.T @ (d[:, None] * Z))
    resid = Z - Phi @ W
    Y = _unbiased_denominator(d)
    degenerate = Y <= 1e-12
    if degenerate:
        Sigma = np.zeros((Z.shape[1], Z.shape[1]))
    else:
        Sigma = (d[:, None] * resid).T @ resid / Y
    Sigma = 0.5 * (Sigma + Sigma.T) + sigma_min * np.eye(Z.shape[1])
    return LinearGaussianPolicy(W, Sigma, rff, degenerate=degenerate)


def init_gaussian_policy(n_gates: int, horizon_s: float, rng: np.random.Generator,
                         time_std: float = 0.5, gamma_std: float = 0.3) -> GaussianPolicy:
    """Times spread uniformly over the horizon (jittered), unit follow weights."""
    base = (np.arange(1, n_gates + 1) / (n_gates + 1)) * horizon_s
    times = base + rng.uniform(-0.1, 0.1, size=n_gates) * horizon_s / (n_gates + 1)
    mu = np.empty(2 * n_gates)
    mu[0::2] = np.sort(times)
    mu[1::2] = 1.0
    var = np.empty(2 * n_gates)
    var[0::2] = time_std**2
    var[1::2] = gamma_std**2
    return GaussianPolicy(mu, np.diag(var))


@dataclass
class LearningCurve:
    iterations: list = field(default_factory=list)
    mean_reward: list = field(default_factory=list)
    std_reward: list = field(default_factory=list)
    greedy_reward: list = field(default_factory=list)

    def append(self, it, mean, std, greedy=None):
        self.iterations.append(int(it))
        self.mean_reward.append(float(mean))
        self.std_reward.append(float(std))
        if greedy is not None:
            self.greedy_reward.append(float(greedy))

    def converged_at(self, tol: float = 1e-3, window: int = 5) -> int | None:
        """First iteration where the windowed mean-reward drift falls below tol.

        Uses the greedy (mean-policy) reward when tracked — it is far less
        noisy than the batch mean — and compares the moving average of
        ``window`` iterations against the previous one: converged once
        |m[k] - m[k-window]| / window < tol.
        """
        m = self.greedy_reward if self.greedy_reward else self.mean_reward
        for k in range(window, len(m)):
            if abs(m[k] - m[k - window]) / window < tol:
                return self.iterations[k]
        return None

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            greedy = self.greedy_reward or [""] * len(self.iterations)
            w.writerow(["iteration", "mean_reward", "std_reward", "greedy_reward"])
            for row in zip(self.iterations, self.mean_reward, self.std_reward, greedy):
                w.writerow(row)


def _converged(curve: LearningCurve, tol: float, patience: int) -> bool:
    if tol <= 0:
        return False
    m = curve.greedy_reward if curve.greedy_reward else curve.mean_reward
    if len(m) <= patience:
        return False
    return abs(m[-1] - m[-1 - patience]) / patience < tol


def train_gaussian(reward_fn, init: GaussianPolicy, beta: float, n_samples: int,
                   max_iters: int, rng: np.random.Generator, dt: float | None = None,
                   t_max: float | None = None, tol: float = 1e-3, patience: int = 5,
                   ) -> tuple[GaussianPolicy, LearningCurve]:
    """MC-EM search for a Gaussian policy over the decision variables.

    ``reward_fn(z_flat) -> R`` scores one episode (typically: solve the MPC
    with z and evaluate the traversal reward); -inf marks a failed episode.
    Samples are repaired into the validity region (times sorted, floored at
    dt) before evaluation when ``dt`` is given. Stops early once the mean
    reward changes by less than ``tol`` for ``patience`` consecutive
    iterations.
    """
    if n_samples < 2:
        raise PolicySearchError("need at least 2 samples per iteration")
    policy = init
    curve = LearningCurve()
    for it in range(1, max_iters + 1):
        Z = policy.sample(rng, n_samples)
        if dt is not None:
            Z = np.array([DecisionVars.repair(z, dt, t_max).as_flat() for z in Z])
        rewards = np.array([reward_fn(z) for z in Z])
        ok = np.isfinite(rewards)
        if np.sum(ok) < 0.5 * n_samples:
            raise PolicySearchError(
                f"iteration {it}: {int(np.sum(~ok))}/{n_samples} episodes failed")
        d = exp_transform(rewards[ok], beta)
        policy = update_gaussian(EpisodeBatch(Z[ok], rewards[ok], d))
        mu = policy.mu
        if dt is not None:
            mu = DecisionVars.repair(mu, dt, t_max).as_flat()
        curve.append(it, np.mean(rewards[ok]), np.std(rewards[ok]),
                     greedy=reward_fn(mu))
        if _converged(curve, tol, patience):
            break
    return policy, curve


def train_linear_gaussian(reward_fn, context_sampler, init: LinearGaussianPolicy,
                          beta: float, n_samples: int, max_iters: int,
                          rng: np.random.Generator, dt: float | None = None,
                          t_max: float | None = None,
                          lam_reg: float = RIDGE_DEFAULT, tol: float = 1e-3,
                          patience: int = 5,
                          ) -> tuple[LinearGaussianPolicy, LearningCurve]:
    """Contextual MC-EM search: z ~ N(W^T phi(s), Sigma), s ~ context_sampler.

    ``reward_fn(z_flat, s) -> R`` scores one episode in context s;
    ``context_sampler(rng, n) -> (n, n_context)`` draws the iteration's
    contexts. Same repair, failure and stopping rules as ``train_gaussian``.
    """
    if n_samples < 2:
        raise PolicySearchError("need at least 2 samples per iteration")
    policy = init
    curve = LearningCurve()
    for it in range(1, max_iters + 1):
        S = np.atleast_2d(context_sampler(rng, n_samples))
        Z = np.array([policy.sample(rng, s) for s in S])
        if dt is not None:
            Z = np.array([DecisionVars.repair(z, dt, t_max).as_flat() for z in Z])
        rewards = np.array([reward_fn(z, s) for z, s in zip(Z, S)])
        ok = np.isfinite(rewards)
        if np.sum(ok) < 0.5 * n_samples:
            raise PolicySearchError(
                f"iteration {it}: {int(np.sum(~ok))}/{n_samples} episodes failed")
        d = exp_transform(rewards[ok], beta)
        policy = update_linear_gaussian(
            EpisodeBatch(Z[ok], rewards[ok], d, contexts=S[ok]), policy.rff, lam_reg)
        curve.append(it, np.mean(rewards[ok]), np.std(rewards[ok]))
        if _converged(curve, tol, patience):
            break
    return policy, curve
