"""Command-line entry points for training, evaluation and benchmarks.

Every run writes into a run directory (``--out``) containing the resolved
configuration, the seed, a provenance stamp and the command's artifacts,
so results can be reproduced from the directory alone.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .harness import (eval_linear_policy, load_config,
                      planning_scenario, provenance, run_episode,
                      single_gate_scenario, sweep, sweep_scenario)
from .neural_policy import (Dataset, SearchConfig, TrainConfig,
                            collect_dataset, mlp_predict, train_mlp)
from .policy_search import load_policy, save_policy


def _run_dir(args, cfg: dict) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = dict(cfg)
    resolved.update({k: v for k, v in vars(args).items()
                     if k not in ("func", "config") and v is not None})
    resolved = {k: (v if isinstance(v, (int, float, str, bool, list, dict))
                    else str(v)) for k, v in resolved.items()}
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True))
    (out / "provenance.json").write_text(
        json.dumps(provenance(resolved, args.seed), indent=2))
    return out


def _load_cfg(args) -> dict:
    return load_config(args.config) if args.config else {}


def _scenario(cfg: dict):
    kind = cfg.get("scenario", "planning")
    if kind == "planning":
        return planning_scenario()
    if kind == "single_gate":
        return single_gate_scenario()
    raise SystemExit(f"unknown scenario {kind!r}")


def cmd_train_gaussian(args) -> int:
    cfg = _load_cfg(args)
    out = _run_dir(args, cfg)
    sc = _scenario(cfg)
    policy, curve = harness.train_planning_gaussian(
        sc, beta=args.beta, n_samples=args.samples, max_iters=args.iters,
        seed=args.seed)
    save_policy(policy, out / "policy.json", seed=args.seed)
    curve.write_csv(out / "learning_curve.csv")
    conv = curve.converged_at()
    print(f"converged at iteration {conv}" if conv is not None
          else "did not converge")
    print(f"wrote {out / 'policy.json'}")
    return 0


def cmd_train_linear(args) -> int:
    cfg = _load_cfg(args)
    out = _run_dir(args, cfg)
    sc = _scenario(cfg)
    policy, curve = harness.train_planning_linear(
        sc, beta=args.beta, n_samples=args.samples, max_iters=args.iters,
        seed=args.seed)
    save_policy(policy, out / "policy.json", seed=args.seed)
    curve.write_csv(out / "learning_curve.csv")
    print(f"wrote {out / 'policy.json'}")
    return 0


def cmd_eval_linear(args) -> int:
    cfg = _load_cfg(args)
    out = _run_dir(args, cfg)
    sc = _scenario(cfg)
    policy = load_policy(args.policy)
    report = eval_linear_policy(policy, sc, n_trials=args.trials, seed=args.seed)
    (out / "table.json").write_text(json.dumps(report, indent=2))
    for sel, row in report.items():
        succ = ", ".join(f"{v:.0f}%" for v in row["success_pct"])
        errs = ", ".join(f"{m:.2f}+/-{s:.2f}" for m, s in
                         zip(row["mean_error"], row["std_error"]))
        print(f"{sel:>10}: success [{succ}]  error [{errs}] m")
    return 0


def cmd_collect_nn(args) -> int:
    cfg = _load_cfg(args)
    out = _run_dir(args, cfg)
    sc = single_gate_scenario()
    rng = np.random.default_rng(args.seed)
    data = collect_dataset(sc, args.samples, SearchConfig(), rng)
    data.write_csv(out / "dataset.csv")
    print(f"collected {len(data)} samples -> {out / 'dataset.csv'}")
    return 0


def cmd_train_nn(args) -> int:
    cfg = _load_cfg(args)
    out = _run_dir(args, cfg)
    data = Dataset.read_csv(args.dataset)
    params, history = train_mlp(data, TrainConfig(epochs=args.epochs,
                                                  seed=args.seed))
    params.save(out / "mlp.json", seed=args.seed)
    val_rmse = float(np.sqrt(min(history["val_loss"])))
    print(f"validation RMSE {val_rmse:.3f} s -> {out / 'mlp.json'}")
    return 0


def cmd_run_episode(args) -> int:
    cfg = _load_cfg(args)
    out = _run_dir(args, cfg)
    sc = _scenario(cfg)
    controller = harness.HighMpcController(sc.mpc_config(), sc.goal)
    rng = np.random.default_rng(args.seed)
    result = run_episode(controller, sc, rng)
    (out / "episode.json").write_text(json.dumps(result.to_dict(), indent=2))
    np.savez(out / "trajectory.npz", states=result.states, inputs=result.inputs)
    errs = ", ".join(f"{e:.3f}" for e in result.gate_errors)
    print(f"success={result.success} gate errors [{errs}] m "
          f"({result.termination})")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    out = _run_dir(args, cfg)

    def high_mpc(sc):
        return harness.HighMpcController(sc.mpc_config(), sc.goal)

    def standard(sc):
        from .baselines import StandardMpcController
        return StandardMpcController(sc.mpc_config(), sc.goal)

    def min_jerk(sc):
        from .baselines import MinJerkController
        return MinJerkController(sc.goal)

    factories = {"high_mpc": high_mpc, "standard_mpc": standard,
                 "min_jerk": min_jerk}
    if args.controllers:
        factories = {k: factories[k] for k in args.controllers.split(",")}
    dx = [float(v) for v in args.dx.split(",")]
    vx = [float(v) for v in args.vx.split(",")]
    grids = sweep(factories, dx, vx, trials=args.trials, seed=args.seed,
                  workers=args.workers)
    for name, grid in grids.items():
        grid.write_csv(out / f"sweep_{name}.csv")
        print(f"{name:>14}: aggregate success "
              f"{100 * grid.aggregate_success():.1f}%")
    return 0


def cmd_plot_data(args) -> int:
    import csv
    with open(args.csv, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        print("error: empty CSV", file=sys.stderr)
        return 2
    series = {k: [] for k in rows[0]}
    for row in rows:
        for k, v in row.items():
            try:
                series[k].append(float(v))
            except (TypeError, ValueError):
                series[k].append(v)
    out = Path(args.json) if args.json else Path(args.csv).with_suffix(".json")
    out.write_text(json.dumps(series, indent=2))
    print(f"wrote {out} ({len(rows)} rows, columns: {', '.join(series)})")
    return 0


def cmd_benchmark(args) -> int:
    from . import benchmark
    argv = ["--repeats", str(args.repeats)] + (["--solo"] if args.solo else [])
    return benchmark.main(argv)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="highmpc", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default="runs/latest", help="run directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="YAML config file")

    p = sub.add_parser("train-gaussian", help="train the Gaussian policy on "
                       "the fixed planning task")
    common(p)
    p.add_argument("--beta", type=float, default=10.0)
    p.add_argument("--samples", type=int, default=30)
    p.add_argument("--iters", type=int, default=30)
    p.set_defaults(func=cmd_train_gaussian)

    p = sub.add_parser("train-linear", help="train the contextual linear "
                       "policy over random gate angles")
    common(p)
    p.add_argument("--beta", type=float, default=10.0)
    p.add_argument("--samples", type=int, default=300)
    p.add_argument("--iters", type=int, default=30)
    p.set_defaults(func=cmd_train_linear)

    p = sub.add_parser("eval-linear", help="tabulate traversal errors of a "
                       "trained linear policy vs heuristic and random")
    common(p)
    p.add_argument("--policy", required=True)
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=cmd_eval_linear)

    p = sub.add_parser("collect-nn", help="collect (observation, time) "
                       "pairs by online policy search")
    common(p)
    p.add_argument("--samples", type=int, default=4000)
    p.set_defaults(func=cmd_collect_nn)

    p = sub.add_parser("train-nn", help="fit the traversal-time MLP")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.set_defaults(func=cmd_train_nn)

    p = sub.add_parser("run-episode", help="fly one closed-loop episode")
    common(p)
    p.set_defaults(func=cmd_run_episode)

    p = sub.add_parser("sweep", help="closed-loop success-rate sweep over "
                       "gate spacing and initial speed")
    common(p)
    p.add_argument("--dx", default="1,3,5,7,9")
    p.add_argument("--vx", default="0,2,4,6")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--controllers", help="comma list: high_mpc,standard_mpc,"
                   "min_jerk (default all)")
    p.add_argument("--workers", type=int, default=1,
                   help="trial worker threads (results are identical for "
                   "any value)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot-data", help="convert a result CSV into "
                       "plot-ready JSON column series")
    p.add_argument("--csv", required=True, help="input CSV file")
    p.add_argument("--json", help="output path (default: CSV path with "
                   ".json suffix)")
    p.set_defaults(func=cmd_plot_data)

    p = sub.add_parser("benchmark", help="compare the compiled and "
                       "pure-Python solver backends")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--solo", action="store_true")
    p.set_defaults(func=cmd_benchmark)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
