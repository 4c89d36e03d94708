"""Command-line entry point: ``lpvmpc <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime abort.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, LpvMpcError
from .ga import SELECTIONS, GaConfig, genes_to_weights, run_ga, sphere_fitness, tune_weights
from .harness import (compute_metrics, export_csv, import_csv, load_config, read_config_dict,
                      run_closed_loop)
from .nn import MlpModel, StiffnessDataset, StiffnessRegressor, forward, generate_dataset, r2_score
from .vehicle import PacejkaCoeffs, VehicleParams

log = logging.getLogger("lpvmpc")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _common_sim_flags(p):
    p.add_argument("--config", required=True, help="experiment JSON or preset name")
    p.add_argument("--seed", type=int)
    p.add_argument("--qp-tol", type=float)
    p.add_argument("--qp-max-iter", type=int)
    p.add_argument("--model", help="trained stiffness model JSON (overrides model_path)")
    p.add_argument("--no-adapt", action="store_true", help="fixed nominal stiffness")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lpvmpc", description="Adaptive LPV-MPC driving toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="run one closed-loop experiment")
    _common_sim_flags(p)
    p.add_argument("--out", required=True, help="CSV log path")
    p.add_argument("--weights", help="JSON with q_diag/r_diag (e.g. tune-ga output)")
    p.add_argument("--no-timing", action="store_true",
                   help="write 0 into solve_time so the CSV is byte-reproducible")

    p = sub.add_parser("tune-ga", help="tune MPC weights with the genetic algorithm")
    _common_sim_flags(p)
    p.add_argument("--out", required=True, help="best weights JSON")
    p.add_argument("--history", help="per-generation CSV (default: <out>.csv)")
    p.add_argument("--generations", type=int)
    p.add_argument("--pop-size", type=int)
    p.add_argument("--n-jobs", type=int, default=1)

    p = sub.add_parser("gen-data", help="generate a stiffness training set")
    p.add_argument("--points", type=int, default=10752)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-nn", help="train the stiffness network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON with a 'train' section")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--curve", help="write per-epoch train/validation loss CSV")

    p = sub.add_parser("bench-ga", help="sphere benchmark of the selection variants")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--generations", type=int, default=100)
    p.add_argument("--dim", type=int, default=5)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("report", help="print metrics of a logged run as JSON")
    p.add_argument("--run", required=True)
    p.add_argument("--config", required=True)
    return parser


def _load_experiment(args):
    cfg = load_config(args.config)
    mpc = cfg.mpc
    if getattr(args, "qp_tol", None) is not None:
        mpc = replace(mpc, qp_tol=args.qp_tol)
    if getattr(args, "qp_max_iter", None) is not None:
        mpc = replace(mpc, qp_max_iter=args.qp_max_iter)
    weights = getattr(args, "weights", None)
    if weights:
        data = json.loads(Path(weights).read_text())
        mpc = replace(mpc, q_diag=data["q_diag"], r_diag=data["r_diag"])
    changes = {"mpc": mpc}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "model", None):
        changes["model_path"] = args.model
    if getattr(args, "no_adapt", False):
        changes["adaptation"] = False
    return replace(cfg, **changes)


def cmd_simulate(args) -> int:
    cfg = _load_experiment(args)
    run = run_closed_loop(cfg, timing=not args.no_timing)
    export_csv(run, args.out)
    if not run.completed:
        log.error("run aborted: %s", run.reason)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_tune_ga(args) -> int:
    cfg = _load_experiment(args)
    model = MlpModel.load(cfg.model_path) if cfg.adaptation else None
    data, _ = read_config_dict(args.config)
    ga_cfg = GaConfig.from_dict(data.get("ga", {}))
    if args.generations:
        ga_cfg = replace(ga_cfg, generations=args.generations)
    if args.pop_size:
        ga_cfg = replace(ga_cfg, pop_size=args.pop_size)
    if args.seed is not None:
        ga_cfg = replace(ga_cfg, seed=args.seed)
    result = tune_weights(cfg, ga_cfg, model=model, n_jobs=args.n_jobs)
    q, r = genes_to_weights(result.best.genes)
    Path(args.out).write_text(json.dumps(
        {"q_diag": list(q), "r_diag": list(r), "fitness": result.best.fitness,
         "evaluations": result.evaluations}, indent=2))
    history = args.history or str(Path(args.out).with_suffix(".csv"))
    _write_history(history, result)
    return EXIT_OK


def _write_history(path, result):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gen", "best_fitness", "mean_fitness"])
        for g, (b, m) in enumerate(zip(result.history, result.mean_history)):
            w.writerow([g, repr(b), repr(m)])


def cmd_gen_data(args) -> int:
    params = VehicleParams()
    ds = generate_dataset(params, PacejkaCoeffs.from_vehicle(params), args.points, args.seed)
    ds.to_csv(args.out)
    return EXIT_OK


def cmd_train_nn(args) -> int:
    ds = StiffnessDataset.from_csv(args.data)
    hyper = {}
    if args.config:
        hyper = dict(read_config_dict(args.config)[0].get("train", {}))
    overrides = {"epochs": args.epochs, "batch_size": args.batch_size,
                 "learning_rate": args.learning_rate, "random_state": args.seed}
    hyper.update({k: v for k, v in overrides.items() if v is not None})
    est = StiffnessRegressor(**hyper).fit(ds.X, ds.y)
    est.model_.save(args.out)
    if args.curve:
        with open(args.curve, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for i, (a, b) in enumerate(zip(est.loss_curve_, est.validation_loss_curve_)):
                w.writerow([i + 1, repr(a), repr(b)])
    tr = est.train_indices_
    print(json.dumps({
        "train_loss": est.loss_curve_[-1] if est.loss_curve_ else None,
        "val_loss": est.validation_loss_curve_[-1] if est.validation_loss_curve_ else None,
        "r2_train": r2_score(forward(est.model_, ds.X[tr]), ds.y[tr]),
        "r2_val": getattr(est, "validation_r2_", None),
    }, indent=2))
    return EXIT_OK


def cmd_bench_ga(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bounds = [(-100.0, 100.0)] * args.dim
    for sel in SELECTIONS:
        with open(out / f"sphere_{sel}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "gen", "best_fitness", "mean_fitness"])
            for seed in range(args.seeds):
                cfg = GaConfig(generations=args.generations, pop_size=20, seed=seed, selection=sel)
                res = run_ga(sphere_fitness, cfg, bounds)
                for g, (b, m) in enumerate(zip(res.history, res.mean_history)):
                    w.writerow([seed, g, repr(b), repr(m)])
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = load_config(args.config)
    run = import_csv(args.run)
    print(json.dumps(compute_metrics(run, cfg.mpc).to_dict(), indent=2))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "tune-ga": cmd_tune_ga, "gen-data": cmd_gen_data,
    "train-nn": cmd_train_nn, "bench-ga": cmd_bench_ga, "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, KeyError, TypeError,
            ValueError) as exc:
        print(f"lpvmpc: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LpvMpcError as exc:
        print(f"lpvmpc: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
