"""Timing comparison of the compiled and pure-Python solver backends.

The package ships the hot kernels (rollout, linearization, the full
Gauss-Newton solve loop) both as a Cython extension and as a numpy
fallback. This module times identical workloads against both and checks
that their iterates agree, so a regression in either backend is visible.

Run it with ``python3 -m highmpc.benchmark`` or via ``highmpc benchmark``.
"""

from __future__ import annotations

import os
import statistics
import subprocess
import sys
import time

from ._core import BACKEND
from .dynamics import QuadState
from .harness import planning_scenario, plan_gate_trajectories, heuristic_z
from .trajopt import MpcController, build_cost, solve_trajectory


def _planning_problem():
    sc = planning_scenario()
    z = heuristic_z(sc, sc.theta0)
    gate_trajs = plan_gate_trajectories(sc, sc.theta0)
    cfg = sc.mpc_config()
    cost = build_cost(z, gate_trajs, sc.goal, cfg.weights, cfg.H, cfg.dt,
                      g_z=cfg.g_z)
    return sc, cfg, cost


def time_solve(n_repeats: int = 10) -> dict:
    """Time a cold full-horizon solve of the planning problem."""
    sc, cfg, cost = _planning_problem()
    samples = []
    result = None
    for _ in range(n_repeats):
        t0 = time.perf_counter()
        result = solve_trajectory(sc.x0, cost, cfg.bounds, cfg.H, cfg.dt,
                                  params=cfg.solver)
        samples.append(1e3 * (time.perf_counter() - t0))
    return {
        "backend": BACKEND,
        "H": cfg.H,
        "median_ms": statistics.median(samples),
        "min_ms": min(samples),
        "iters": result.solve_stats["iterations"],
        "cost": result.total_cost,
    }


def time_mpc_step(n_steps: int = 30, horizon_s: float = 2.0, dt: float = 0.1) -> dict:
    """Time warm-started receding-horizon steps (the closed-loop workload)."""
    sc = planning_scenario(dt=dt, horizon_s=horizon_s)
    z = heuristic_z(sc, sc.theta0)
    gates = sc.gates_at(sc.theta0, sc.theta_dot0)
    mpc = MpcController(sc.mpc_config(), sc.goal)
    x = sc.x0.copy()
    samples = []
    for _ in range(n_steps):
        t0 = time.perf_counter()
        u, _ = mpc.step(x, z, gates, sc.pendulums)
        samples.append(1e3 * (time.perf_counter() - t0))
        x = QuadState.from_array(x).as_array()  # state held fixed: timing only
    return {
        "backend": BACKEND,
        "H": mpc.cfg.H,
        "median_ms": statistics.median(samples),
        "max_ms": max(samples),
    }


def compare_backends(n_repeats: int = 10) -> dict:
    """Run the cold-solve benchmark under both backends.

    The other backend runs in a subprocess because the choice is fixed at
    import time. Also checks both backends reach the same cost.
    """
    here = time_solve(n_repeats)
    other_env = dict(os.environ)
    if BACKEND == "cython":
        other_env["HIGHMPC_PURE_PY"] = "1"
    else:
        other_env.pop("HIGHMPC_PURE_PY", None)
    code = ("import json; from highmpc.benchmark import time_solve; "
            f"print(json.dumps(time_solve({n_repeats})))")
    proc = subprocess.run([sys.executable, "-c", code], env=other_env,
                          capture_output=True, text=True, check=True)
    import json
    other = json.loads(proc.stdout.strip().splitlines()[-1])
    if other["backend"] == here["backend"]:
        # only one backend available (extension not built)
        return {"available": [here], "agree": True}
    agree = abs(here["cost"] - other["cost"]) <= 1e-6 * max(1.0, abs(here["cost"]))
    return {"available": [here, other], "agree": agree,
            "speedup": other["median_ms"] / here["median_ms"]
            if here["backend"] == "cython" else
            here["median_ms"] / other["median_ms"]}


def main(argv=None) -> int:
    import argparse
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--solo", action="store_true",
                    help="time only the active backend (no subprocess)")
    args = ap.parse_args(argv)
    if args.solo:
        r = time_solve(args.repeats)
        print(f"[{r['backend']}] cold solve H={r['H']}: "
              f"{r['median_ms']:.1f} ms median ({r['iters']} iterations)")
        s = time_mpc_step()
        print(f"[{s['backend']}] warm mpc step H={s['H']}: "
              f"{s['median_ms']:.1f} ms median, {s['max_ms']:.1f} ms max")
        return 0
    rep = compare_backends(args.repeats)
    for r in rep["available"]:
        print(f"[{r['backend']}] cold solve H={r['H']}: "
              f"{r['median_ms']:.1f} ms median ({r['iters']} iterations, "
              f"cost {r['cost']:.6f})")
    if "speedup" in rep:
        print(f"speedup (cython over python): {rep['speedup']:.1f}x; "
              f"costs agree: {rep['agree']}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
