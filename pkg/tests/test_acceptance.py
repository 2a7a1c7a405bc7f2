"""End-to-end acceptance gates.

Each test covers one release criterion, runs the full protocol at the stated
scale, and prints a single PASS/FAIL line. These train policies from scratch
and are much slower than the unit suites; deselect the module for quick
iteration.
"""

import time

import numpy as np
import pytest
from scipy.optimize import minimize

from highmpc.baselines import MinJerkController, StandardMpcController, \
    min_jerk_primitive
from highmpc.dynamics import GRAVITY, PendulumParams, QuadState, gate_pose, \
    pendulum_energy, predict_gate_trajectory
from highmpc.harness import (HighMpcController, eval_linear_policy,
                             plan_errors, planning_scenario, run_episode,
                             single_gate_scenario, sweep,
                             train_planning_gaussian, train_planning_linear)
from highmpc.neural_policy import (MlpParams, NeuralHighMpcPolicy, TrainConfig,
                                   collect_dataset, mlp_loss_and_grads,
                                   train_mlp)
from highmpc.policy_search import (EpisodeBatch, GaussianPolicy, RffSpec,
                                   rff_features, update_gaussian,
                                   update_linear_gaussian)
from highmpc.trajopt import (CostWeights, DecisionVars, MpcConfig,
                             MpcController, build_cost)


def _report(n: int, name: str, ok: bool, detail: str = "") -> None:
    line = f"[ACCEPTANCE] criterion {n} ({name}): {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" — {detail}"
    print(line)


# ---------------------------------------------------------------------------
# 1. closed-form policy updates vs numerical weighted-ML maximizer
# ---------------------------------------------------------------------------

def test_criterion_1_update_oracle_equivalence():
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n, dim = 20, 2
        Z = rng.normal(size=(n, dim)) * rng.uniform(0.5, 2.0)
        d = rng.uniform(0.01, 1.0, size=n)
        batch = EpisodeBatch(Z, np.zeros(n), d)
        pol = update_gaussian(batch, sigma_min=0.0)

        # numerical maximizer over (mu, cholesky of Sigma), analytic gradient
        def nll(theta):
            mu = theta[:dim]
            L = np.array([[theta[2], 0.0], [theta[3], theta[4]]])
            S = L @ L.T
            Si = np.linalg.inv(S)
            dz = Z - mu
            quad = np.einsum("ni,ij,nj->n", dz, Si, dz)
            f = float(np.sum(d * (0.5 * quad
                                  + 0.5 * np.log(np.linalg.det(S)))))
            g_mu = -Si @ (d @ dz)
            M = (d[:, None] * dz).T @ dz
            G_S = 0.5 * d.sum() * Si - 0.5 * Si @ M @ Si
            G_L = 2.0 * G_S @ L
            return f, np.array([g_mu[0], g_mu[1],
                                G_L[0, 0], G_L[1, 0], G_L[1, 1]])

        mu0 = Z.mean(axis=0)
        theta0 = np.concatenate([mu0, [1.0, 0.0, 1.0]])
        res = minimize(nll, theta0, method="BFGS", jac=True,
                       options={"gtol": 1e-12, "maxiter": 2000})
        mu_num = res.x[:dim]
        L = np.array([[res.x[2], 0.0], [res.x[3], res.x[4]]])
        S_num = L @ L.T
        worst = max(worst, float(np.max(np.abs(pol.mu - mu_num))))
        # the closed form normalizes by the unbiased denominator Y; the ML
        # maximizer normalizes by sum(d) — compare on the common scale
        Y = (d.sum() ** 2 - (d ** 2).sum()) / d.sum()
        worst = max(worst, float(np.max(np.abs(pol.Sigma * (Y / d.sum())
                                               - S_num))))

        # linear-Gaussian: closed-form ridge vs numerical minimizer
        M, lam = 5, 1e-2
        rff = RffSpec.draw(3, M=M, v=0.5, rng=rng)
        S_ctx = rng.uniform(-0.6, 0.6, size=(n, 3))
        lbatch = EpisodeBatch(Z, np.zeros(n), d, contexts=S_ctx)
        lpol = update_linear_gaussian(lbatch, rff, lam_reg=lam, sigma_min=0.0)
        Phi = np.array([rff_features(s, rff) for s in S_ctx])

        def ridge_obj(w_flat):
            W = w_flat.reshape(M, dim)
            r = Z - Phi @ W
            f = float(np.sum(d[:, None] * r * r) + lam * np.sum(W * W))
            g = -2.0 * Phi.T @ (d[:, None] * r) + 2.0 * lam * W
            return f, g.ravel()

        res = minimize(ridge_obj, np.zeros(M * dim), method="L-BFGS-B",
                       jac=True, options={"ftol": 1e-16, "gtol": 1e-12,
                                          "maxiter": 5000})
        worst = max(worst, float(np.max(np.abs(lpol.W
                                               - res.x.reshape(M, dim)))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 60.0
    _report(1, "appendix-oracle equivalence", ok,
            f"max param deviation {worst:.2e} over 100 batches, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 2. gradient checks (cost evaluator and MLP backprop) vs central differences
# ---------------------------------------------------------------------------

def test_criterion_2_gradient_checks():
    rng = np.random.default_rng(1)
    H, dt = 20, 0.05
    pp = PendulumParams(anchor=[2.0, 0.0, 3.0])
    trajs = [predict_gate_trajectory(gate_pose(0.5, 0.0, pp), pp, H, dt)]
    z = DecisionVars([0.7], [1.0])
    goal = QuadState.hover([4.0, 0.0, 1.5]).as_array()
    cost = build_cost(z, trajs, goal, CostWeights(), H, dt)
    eps = 1e-6
    worst_cost = 0.0
    for _ in range(50):
        X = rng.normal(size=(H + 1, 10))
        U = rng.normal(size=(H, 4))
        h = int(rng.integers(0, H))
        gx, gu = cost.grad_x(X)[h], cost.grad_u(U)[h]
        j = int(rng.integers(0, 10))
        dx = np.zeros(10)
        dx[j] = eps
        fd = (cost.stage_cost(X[h] + dx, U[h], h)
              - cost.stage_cost(X[h] - dx, U[h], h)) / (2 * eps)
        worst_cost = max(worst_cost, abs(fd - gx[j]) / max(1.0, abs(fd)))
        j = int(rng.integers(0, 4))
        du = np.zeros(4)
        du[j] = eps
        fd = (cost.stage_cost(X[h], U[h] + du, h)
              - cost.stage_cost(X[h], U[h] - du, h)) / (2 * eps)
        worst_cost = max(worst_cost, abs(fd - gu[j]) / max(1.0, abs(fd)))

    worst_mlp = 0.0
    for _ in range(50):
        p = MlpParams.init(rng)
        O = rng.normal(size=(4, 10))
        y = rng.uniform(0.5, 2.5, size=4)
        _, gW, gb = mlp_loss_and_grads(p, O, y)
        layer = int(rng.integers(0, 3))
        W = p.weights[layer]
        idx = (int(rng.integers(W.shape[0])), int(rng.integers(W.shape[1])))
        W[idx] += eps
        lp, _, _ = mlp_loss_and_grads(p, O, y)
        W[idx] -= 2 * eps
        lm, _, _ = mlp_loss_and_grads(p, O, y)
        W[idx] += eps
        fd = (lp - lm) / (2 * eps)
        worst_mlp = max(worst_mlp, abs(fd - gW[layer][idx])
                        / max(1e-8, abs(fd), abs(gW[layer][idx])))
    ok = worst_cost <= 1e-4 and worst_mlp <= 1e-4
    _report(2, "gradient checks", ok,
            f"cost {worst_cost:.2e}, mlp {worst_mlp:.2e} (50 probes each)")
    assert ok


# ---------------------------------------------------------------------------
# 3. planning experiment: Gaussian policy convergence and error magnitudes
# ---------------------------------------------------------------------------

def test_criterion_3_planning_experiment():
    sc = planning_scenario()
    policy, curve = train_planning_gaussian(sc, beta=10.0, n_samples=30,
                                            max_iters=15, seed=4)
    conv = curve.converged_at(tol=1e-3)
    z = DecisionVars.repair(policy.mu, sc.dt, sc.horizon_s - sc.dt)
    errs = plan_errors(z, sc, sc.theta0)
    in_band = (0.13 / 3 <= errs[0] <= 0.13 * 3
               and 0.15 / 3 <= errs[1] <= 0.15 * 3
               and 0.30 / 3 <= errs[2] <= 0.30 * 3)
    ok = (conv is not None and conv <= 15
          and bool(np.all(errs < 0.5)) and in_band)
    _report(3, "planning experiment", ok,
            f"converged at {conv}, errors {np.round(errs, 3).tolist()} m")
    assert ok


# ---------------------------------------------------------------------------
# 4. Table-I reproduction at 100 trials
# ---------------------------------------------------------------------------

def test_criterion_4_table_reproduction():
    sc = planning_scenario()
    policy, _ = train_planning_linear(sc, max_iters=30, seed=0)
    report = eval_linear_policy(policy, sc, n_trials=100, seed=0)
    ours, heur, rand = (report[k] for k in ("learned", "heuristic", "random"))
    succ = np.array(ours["success_pct"])
    mean = np.array(ours["mean_error"])
    ok = bool(
        np.all(np.abs(succ - [100, 100, 94]) <= 10)
        and np.all(np.abs(mean - [0.17, 0.21, 0.30]) <= 0.15)
        and np.all(np.array(rand["success_pct"]) == 0.0))
    # ordering Ours > Heuristic > Random on gates 2-3, lexicographic on
    # (success rate desc, mean error asc) since the baselines tie at 0%
    for g in (1, 2):
        for hi, lo in ((ours, heur), (heur, rand)):
            better = (hi["success_pct"][g] > lo["success_pct"][g]
                      or (hi["success_pct"][g] == lo["success_pct"][g]
                          and hi["mean_error"][g] < lo["mean_error"][g]))
            ok = ok and better
    _report(4, "Table-I reproduction", ok,
            f"ours succ {succ.tolist()}%, mean {np.round(mean, 3).tolist()} m; "
            f"heuristic succ {heur['success_pct']}; "
            f"random succ {rand['success_pct']}")
    assert ok


# ---------------------------------------------------------------------------
# 5. closed-loop sweep: High-MPC beats both baselines in aggregate
# ---------------------------------------------------------------------------

def test_criterion_5_closed_loop_sweep():
    factories = {
        "high_mpc": lambda sc: HighMpcController(sc.mpc_config(), sc.goal),
        "standard_mpc": lambda sc: StandardMpcController(sc.mpc_config(),
                                                         sc.goal),
        "min_jerk": lambda sc: MinJerkController(sc.goal),
    }
    grids = sweep(factories, [1.0, 3.0, 5.0, 7.0, 9.0], [0.0, 2.0, 4.0, 6.0],
                  trials=5, seed=0, workers=4)
    agg = {k: g.aggregate_success() for k, g in grids.items()}
    ok = (agg["high_mpc"] > agg["standard_mpc"]
          and agg["high_mpc"] > agg["min_jerk"])
    _report(5, "closed-loop sweep", ok,
            "aggregate success " + ", ".join(f"{k} {v:.2f}"
                                             for k, v in agg.items()))
    assert ok


# ---------------------------------------------------------------------------
# 6. neural policy: collection, training RMSE, closed-loop pass rate
# ---------------------------------------------------------------------------

def test_criterion_6_neural_policy():
    sc = single_gate_scenario()
    data = collect_dataset(sc, n_target=4000, rng=np.random.default_rng(0))
    params, curve = train_mlp(data, TrainConfig(seed=0))
    rmse = float(np.sqrt(min(curve["val_loss"])))

    policy = NeuralHighMpcPolicy(params)
    passed = 0
    results = []
    for ep in range(20):
        rng = np.random.default_rng(1000 + ep)
        episode_sc = single_gate_scenario()
        x0, theta, theta_dot = episode_sc.reset(rng)
        episode_sc.x0 = x0
        ctl = HighMpcController(episode_sc.mpc_config(), episode_sc.goal,
                                z_selector=policy.decide)
        res = run_episode(ctl, episode_sc, thetas=[theta],
                          theta_dots=[theta_dot], seed=ep)
        results.append(bool(res.success))
        passed += res.success
    ok = rmse <= 0.15 and passed >= 16
    _report(6, "neural policy", ok,
            f"val RMSE {rmse:.3f} s, {passed}/20 episodes passed")
    assert ok


# ---------------------------------------------------------------------------
# 7. performance: warm mpc_step latency at H=20, dt=0.1
# ---------------------------------------------------------------------------

def test_criterion_7_mpc_step_latency():
    sc = single_gate_scenario()
    cfg = MpcConfig(horizon_s=2.0, dt=0.1)
    assert cfg.H == 20
    mpc = MpcController(cfg, sc.goal)
    pp = sc.pendulums[0]
    x = sc.x0.copy()
    z = DecisionVars([1.0], [1.0])
    gate = gate_pose(0.5, 0.0, pp)
    mpc.step(x, z, [gate], [pp])  # warm-up / first factorization
    times = []
    for _ in range(50):
        t0 = time.perf_counter()
        mpc.step(x, z, [gate], [pp])
        times.append(1e3 * (time.perf_counter() - t0))
    med = float(np.median(times))
    ok = med < 50.0
    _report(7, "mpc_step latency", ok, f"median {med:.2f} ms over 50 steps")
    assert ok


# ---------------------------------------------------------------------------
# 8. invariant suites
# ---------------------------------------------------------------------------

def test_criterion_8_invariants():
    rng = np.random.default_rng(2)
    checks = {}

    # quaternion norm preserved over long random rollouts
    from highmpc.dynamics import integrate_quad_array
    worst = 0.0
    for _ in range(10):
        x = QuadState.hover(rng.normal(size=3)).as_array()
        for _ in range(200):
            u = np.concatenate([[rng.uniform(2, 20)], rng.uniform(-3, 3, 3)])
            x = integrate_quad_array(x, u, 0.02)
            worst = max(worst, abs(np.linalg.norm(x[3:7]) - 1.0))
    checks["quaternion norm"] = worst < 1e-9

    # damped pendulum never gains energy
    ok_energy = True
    from highmpc.dynamics import integrate_pendulum
    for _ in range(10):
        pp = PendulumParams(anchor=[0, 0, 3.0], b=rng.uniform(0.05, 1.0))
        th, thd = rng.uniform(-1.2, 1.2), rng.uniform(-1.0, 1.0)
        e = pendulum_energy(th, thd, pp)
        for _ in range(400):
            th, thd = integrate_pendulum(th, thd, pp, 0.01)
            e_new = pendulum_energy(th, thd, pp)
            ok_energy = ok_energy and e_new <= e + 1e-9
            e = e_new
    checks["pendulum energy"] = ok_energy

    # covariance stays PSD (and symmetric) through repeated EM updates
    ok_psd = True
    Z = rng.normal(size=(40, 4))
    for _ in range(20):
        d = rng.uniform(0, 1, size=40) ** 4  # heavily concentrated weights
        pol = update_gaussian(EpisodeBatch(Z, np.zeros(40), d))
        eig = np.linalg.eigvalsh(pol.Sigma)
        ok_psd = ok_psd and np.all(eig >= 0) and np.allclose(
            pol.Sigma, pol.Sigma.T)
    checks["PSD covariance"] = ok_psd

    # minimum-jerk primitives meet their boundary conditions exactly
    ok_bound = True
    for _ in range(20):
        p0, v0, a0 = (rng.normal(size=3) for _ in range(3))
        pf, vf, af = (rng.normal(size=3) for _ in range(3))
        T = rng.uniform(0.5, 3.0)
        prim = min_jerk_primitive(p0, v0, a0, list(pf), list(vf), list(af), T)
        ok_bound = ok_bound and bool(
            np.allclose(prim.position(0), p0, atol=1e-9)
            and np.allclose(prim.position(T), pf, atol=1e-9)
            and np.allclose(prim.velocity(T), vf, atol=1e-9)
            and np.allclose(prim.acceleration(T), af, atol=1e-9))
    checks["primitive boundaries"] = ok_bound

    # per-trial RNG streams make sweep results independent of controller
    # order and of the worker-pool size
    kwargs = dict(dx_values=[3.0], vx_values=[0.0, 2.0], trials=2, seed=0,
                  n_gates=2)
    f_std = lambda sc: StandardMpcController(sc.mpc_config(), sc.goal)
    f_mj = lambda sc: MinJerkController(sc.goal)
    g1 = sweep({"a": f_std, "b": f_mj}, **kwargs)
    g2 = sweep({"b": f_mj, "a": f_std}, workers=4, **kwargs)
    checks["determinism under parallelism"] = bool(
        np.array_equal(g1["a"].success_rate, g2["a"].success_rate)
        and np.array_equal(g1["b"].success_rate, g2["b"].success_rate)
        and np.allclose(g1["a"].mean_error, g2["a"].mean_error,
                        equal_nan=True))

    ok = all(checks.values())
    _report(8, "invariant suites", ok,
            ", ".join(f"{k}: {'ok' if v else 'FAIL'}"
                      for k, v in checks.items()))
    assert ok
