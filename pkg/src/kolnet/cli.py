"""Command-line entry point.

Subcommands: train, eval, greeks, calibrate, count-params,
theory {em-rate, regression, sq-net, paraboloid-net}, dim-sweep.
Every report path writes delimited output (CSV) plus a rendered PNG figure,
along with a plain-text report. Exit codes: 0 success, 1 validation or
runtime failure, 2 usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import plots
from .data import STREAM_EVAL, STREAM_THEORY, RngStream, flatten_batch, sample_lambda
from .evaluation import (
    NetworkCalibrationModel,
    OracleCalibrationModel,
    calibrate,
    l1_relative_error,
    net_predictor,
    network_greeks,
    reference_values,
)
from .multilevel import (
    CheckpointError,
    MultilevelConfig,
    build_feedforward,
    build_multilevel,
    count_params,
    load_checkpoint,
    save_checkpoint,
)
from .problems import (
    PROBLEM_NAMES,
    analytic_greeks_bs,
    analytic_solution,
    build_problem,
    gamma_bounds,
    heat_paraboloid_dim,
    solution_batch,
)
from .theory import (
    build_paraboloid_relu_net,
    build_sq_relu_net,
    em_rate_check,
    regression_identity_check,
)
from .training import (
    ConfigError,
    DivergenceError,
    MetricsLog,
    TrainConfig,
    desk_config,
    table_config,
    train,
)

_CONFIG_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}

_TRAIN_FLAGS = {
    "steps": "steps", "batch_size": "batch_size", "levels": "levels", "q": "q",
    "chi": "chi", "norm": "norm", "lr": "init_lr", "min_lr": "min_lr",
    "decay": "decay", "patience": "patience", "weight_decay": "weight_decay",
    "em_steps": "em_steps", "eval_every": "eval_every",
    "eval_batches": "eval_batches", "eval_batch_size": "eval_batch_size",
    "mc_samples": "mc_samples",
}


def load_config(path) -> dict:
    """Read a JSON config whose keys mirror the training configuration."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config parse error at line {exc.lineno}, "
                              f"column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    allowed = _CONFIG_FIELDS | {"problem", "seeds", "desk"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return doc


def _resolve_train_config(args) -> tuple[TrainConfig, list[int]]:
    """Defaults <- config file <- explicit flags, in increasing precedence."""
    file_cfg = load_config(args.config) if args.config else {}
    problem = args.problem or file_cfg.get("problem")
    if problem is None:
        raise ConfigError("a problem is required (flag --problem or config file)")
    if problem not in PROBLEM_NAMES:
        raise ConfigError(f"unknown problem {problem!r}; expected one of {PROBLEM_NAMES}")
    desk = args.desk or bool(file_cfg.get("desk"))
    cfg = desk_config(problem) if desk else table_config(problem)
    for key, value in file_cfg.items():
        if key in _CONFIG_FIELDS and key != "problem":
            cfg = dataclasses.replace(cfg, **{key: value})
    for flag, field in _TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg = dataclasses.replace(cfg, **{field: value})
    seeds = _parse_seeds(args, file_cfg)
    cfg = dataclasses.replace(cfg, seed=seeds[0])
    return cfg, seeds


def _parse_seeds(args, file_cfg) -> list[int]:
    if getattr(args, "seeds", None):
        return [int(s) for s in args.seeds.split(",")]
    if getattr(args, "seed", None) is not None:
        return [args.seed]
    if "seeds" in file_cfg:
        seeds = file_cfg["seeds"]
        return [int(s) for s in (seeds if isinstance(seeds, list) else [seeds])]
    if "seed" in file_cfg:
        return [int(file_cfg["seed"])]
    return [0]


def _outdir(args, default: str) -> str:
    out = args.out or default
    os.makedirs(out, exist_ok=True)
    return out


def multi_seed(config: TrainConfig, seeds: list[int], out_dir: str,
               spec=None, verbose: bool = True) -> dict:
    """Train once per seed; write per-seed metrics/checkpoints and aggregates.

    The aggregate table reports mean and standard deviation of wall time and
    relative-L1 error across seeds at every evaluation step.
    """
    if not seeds:
        raise ConfigError("need at least one seed")
    logs = {}
    for seed in seeds:
        cfg = dataclasses.replace(config, seed=seed)
        net, log = train(cfg, spec=spec, verbose=verbose)
        logs[seed] = log
        log.to_csv(os.path.join(out_dir, f"metrics_seed{seed}.csv"))
        save_checkpoint(net, {"problem": config.problem, "step": log.rows[-1].step,
                              "seed": seed},
                        os.path.join(out_dir, f"checkpoint_seed{seed}.json"))
    steps = [r.step for r in logs[seeds[0]].eval_rows()]
    table = []
    for i, step in enumerate(steps):
        times = [logs[s].eval_rows()[i].time_s for s in seeds]
        errs = [logs[s].eval_rows()[i].l1_error for s in seeds]
        table.append({
            "step": step,
            "time_mean": float(np.mean(times)), "time_std": float(np.std(times)),
            "l1_mean": float(np.mean(errs)), "l1_std": float(np.std(errs)),
        })
    agg_path = os.path.join(out_dir, "aggregate.csv")
    with open(agg_path, "w", encoding="utf-8") as fh:
        fh.write("step,time_mean,time_std,l1_mean,l1_std\n")
        for row in table:
            fh.write(f"{row['step']},{row['time_mean']!r},{row['time_std']!r},"
                     f"{row['l1_mean']!r},{row['l1_std']!r}\n")
    lines = [f"problem: {config.problem}   seeds: {seeds}",
             f"{'step':>8}  {'avg. time (s)':>18}  {'avg. L1-error':>22}"]
    for row in table:
        lines.append(f"{row['step']:>8}  {row['time_mean']:>10.1f} +- {row['time_std']:<5.1f}"
                     f"  {row['l1_mean']:>12.4f} +- {row['l1_std']:<8.4f}")
    report = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report)
    plots.save_training_curves(os.path.join(out_dir, "curves.png"), logs,
                               f"{config.problem} ({len(seeds)} seeds)")
    if verbose:
        print(report, end="")
    return {"table": table, "logs": logs}


def cmd_train(args) -> int:
    config, seeds = _resolve_train_config(args)
    out = _outdir(args, os.path.join("runs", "train"))
    multi_seed(config, seeds, out, verbose=not args.quiet)
    return 0


def cmd_eval(args) -> int:
    net, meta = load_checkpoint(args.checkpoint)
    problem = args.problem or meta.get("problem")
    if problem is None:
        raise ConfigError("checkpoint carries no problem name; pass --problem")
    spec = build_problem(problem)
    if spec.dim_in != net.config.p:
        raise CheckpointError(f"checkpoint input width {net.config.p} does not match "
                              f"{problem} (dim_in {spec.dim_in})")
    out = _outdir(args, os.path.join("runs", "eval"))
    rng = RngStream(args.seed, STREAM_EVAL)
    predict = net_predictor(net, spec)
    batch = sample_lambda(spec, rng, args.batch_size)
    values = predict(batch)
    refs = reference_values(spec, batch, rng, args.mc_samples, 25)
    errs = np.abs(values - refs) / (1.0 + np.abs(refs))
    with open(os.path.join(out, "points.csv"), "w", encoding="utf-8") as fh:
        gcols = ",".join(f"gamma_{i}" for i in range(spec.gamma_dim))
        xcols = ",".join(f"x_{i}" for i in range(spec.d))
        fh.write(f"{gcols},{xcols},t,prediction,reference,error\n")
        for i in range(len(batch)):
            row = list(batch.gamma[i]) + list(batch.x[i]) + [batch.t[i], values[i],
                                                             refs[i], errs[i]]
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    plots.save_error_histogram(os.path.join(out, "errors.png"), errs,
                               f"{problem}: n={len(batch)}")
    report = (f"problem: {problem}\nn points: {len(batch)}\n"
              f"relative L1 error: {errs.mean():.6f}\n"
              f"max pointwise error: {errs.max():.6f}\n")
    if problem == "black_scholes":
        xs = np.linspace(spec.x_low, spec.x_high, 101)
        gam = np.broadcast_to(np.array([0.35, 11.0]), (xs.size, 2)).copy()
        flat = flatten_batch(spec, gam, xs[:, None], np.full(xs.size, 0.5))
        net_vals = net.forward(flat, mode="eval").reshape(-1)
        exact = solution_batch(spec, gam, xs[:, None], np.full(xs.size, 0.5))
        plots.save_slice_curves(
            os.path.join(out, "slice.png"), xs,
            {"network": net_vals, "closed form": exact},
            "x", "option value", "sigma=0.35, strike=11, t=0.5")
        slice_err = np.abs(net_vals - exact) / (1.0 + np.abs(exact))
        report += f"slice mean error (sigma=.35, K=11, t=.5): {slice_err.mean():.6f}\n"
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report)
    print(report, end="")
    return 0


def cmd_greeks(args) -> int:
    net, meta = load_checkpoint(args.checkpoint)
    problem = args.problem or meta.get("problem")
    spec = build_problem(problem)
    if spec.dim_in != net.config.p:
        raise CheckpointError("checkpoint does not match the problem's input width")
    out = _outdir(args, os.path.join("runs", "greeks"))
    if problem == "black_scholes":
        sigma, strike, t = args.gamma_sigma, args.strike, args.t
        xs = np.linspace(spec.x_low, spec.x_high, args.grid)
        rows = []
        for x in xs:
            rep = network_greeks(net, spec, np.array([sigma, strike]), np.array([x]), t)
            exact = analytic_greeks_bs(sigma, strike, float(x), t)
            rows.append((float(x), rep.delta, exact.delta, rep.vega, exact.vega,
                         rep.theta, exact.theta))
        arr = np.array(rows)
        with open(os.path.join(out, "greeks.csv"), "w", encoding="utf-8") as fh:
            fh.write("x,delta_net,delta_exact,vega_net,vega_exact,theta_net,theta_exact\n")
            for row in arr:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        plots.save_slice_curves(os.path.join(out, "vega.png"), arr[:, 0],
                                {"network": arr[:, 3], "closed form": arr[:, 4]},
                                "x", "Vega", f"sigma={sigma}, strike={strike}, t={t}")
        vega_err = np.abs(arr[:, 3] - arr[:, 4]) / (1.0 + np.abs(arr[:, 4]))
        delta_err = np.abs(arr[:, 1] - arr[:, 2]) / (1.0 + np.abs(arr[:, 2]))
        report = (f"Vega slice sigma={sigma} strike={strike} t={t}\n"
                  f"mean normalized vega error: {vega_err.mean():.6f}\n"
                  f"mean normalized delta error: {delta_err.mean():.6f}\n")
    else:
        rng = RngStream(args.seed, STREAM_EVAL)
        batch = sample_lambda(spec, rng, 1)
        rep = network_greeks(net, spec, batch.gamma[0], batch.x[0], float(batch.t[0]))
        report = (f"problem: {problem}\npoint: t={batch.t[0]:.4f}\n"
                  f"theta: {rep.theta:.6f}\n"
                  f"|delta|: {np.linalg.norm(np.atleast_1d(rep.delta)):.6f}\n"
                  f"dropped (zero-width, derivative 0): {rep.dropped}\n")
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report)
    print(report, end="")
    return 0


def cmd_calibrate(args) -> int:
    spec = build_problem(args.problem)
    out = _outdir(args, os.path.join("runs", "calibrate"))
    if args.data:
        data = np.loadtxt(args.data, delimiter=",", skiprows=1, ndmin=2)
        xs, ts, us = data[:, :spec.d], data[:, spec.d], data[:, spec.d + 1]
    elif args.synthetic:
        truth = np.array([float(v) for v in args.synthetic.split(",")])
        rng = RngStream(args.seed, STREAM_THEORY)
        xs = rng.uniform(spec.x_low, spec.x_high, (args.n_points, spec.d))
        ts = rng.uniform(0.05, spec.horizon, (args.n_points,))
        tiled = np.broadcast_to(truth, (args.n_points, truth.size))
        us = solution_batch(spec, tiled, xs, ts)
    else:
        raise ConfigError("calibrate needs --data FILE or --synthetic gamma values")
    dataset = [((xs[i], ts[i]), us[i]) for i in range(xs.shape[0])]
    if args.checkpoint:
        net, _ = load_checkpoint(args.checkpoint)
        model = NetworkCalibrationModel(net, spec)
    else:
        model = OracleCalibrationModel(spec)
    gamma_hat = calibrate(model, dataset, spec, steps=args.steps, lr=args.lr)
    resid, _ = model.loss_and_gamma_grad(
        gamma_hat, xs, ts, us)
    report = (f"problem: {args.problem}\nn observations: {xs.shape[0]}\n"
              f"recovered gamma: {np.array2string(gamma_hat, precision=6)}\n"
              f"mean squared residual: {resid:.3e}\n")
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report)
    print(report, end="")
    return 0


def cmd_count_params(args) -> int:
    if args.p is not None:
        p = args.p
    else:
        if args.problem is None:
            raise ConfigError("count-params needs --problem or --p")
        p = build_problem(args.problem).dim_in
    cfg = MultilevelConfig(p=p, L=args.levels, q=args.q, chi=args.chi, norm=args.norm)
    rng = RngStream(0, 0)
    net = build_feedforward(cfg, rng) if args.feedforward else build_multilevel(cfg, rng)
    print(count_params(net))
    return 0


def cmd_theory_em_rate(args) -> int:
    spec = build_problem(args.problem)
    rng = RngStream(args.seed, STREAM_THEORY)
    point = sample_lambda(spec, rng, 1)
    grid = [int(v) for v in args.m_grid.split(",")]
    fit = em_rate_check(spec, point.gamma[0], point.x[0], args.t, grid,
                        args.paths, rng)
    out = _outdir(args, os.path.join("runs", "theory"))
    with open(os.path.join(out, "em_rate.csv"), "w", encoding="utf-8") as fh:
        fh.write("m,strong_error\n")
        for m, err in fit.grid:
            fh.write(f"{m},{err!r}\n")
    plots.save_rate_fit(os.path.join(out, "em_rate.png"), fit.grid, fit.slope,
                        f"{args.problem}: strong error vs steps")
    if fit.exact_scheme:
        report = (f"problem: {args.problem}\nscheme exact for additive noise; "
                  f"max coupled error {max(e for _, e in fit.grid):.3e}\n")
    else:
        report = (f"problem: {args.problem}\nfitted log-log slope: {fit.slope:.4f} "
                  f"(theoretical -0.5)\n")
    with open(os.path.join(out, "em_rate.txt"), "w", encoding="utf-8") as fh:
        fh.write(report)
    print(report, end="")
    return 0


def cmd_theory_regression(args) -> int:
    spec = build_problem(args.problem)
    rng = RngStream(args.seed, STREAM_THEORY)
    out = _outdir(args, os.path.join("runs", "theory"))
    zs = []
    for _ in range(args.points):
        point = sample_lambda(spec, rng, 1)
        check = regression_identity_check(spec, point.gamma[0], point.x[0],
                                          float(point.t[0]), args.m, rng)
        zs.append(check.z_score)
    zs = np.array(zs)
    passed = int((zs <= 3.0).sum())
    with open(os.path.join(out, "regression.csv"), "w", encoding="utf-8") as fh:
        fh.write("point,z_score\n")
        for i, z in enumerate(zs):
            fh.write(f"{i},{z!r}\n")
    plots.save_error_histogram(os.path.join(out, "regression.png"), zs,
                               f"{args.problem}: z-scores")
    report = (f"problem: {args.problem}\npoints: {args.points}, samples each: {args.m}\n"
              f"z <= 3 at {passed}/{args.points} points\n")
    with open(os.path.join(out, "regression.txt"), "w", encoding="utf-8") as fh:
        fh.write(report)
    print(report, end="")
    return 0


def cmd_theory_sq_net(args) -> int:
    out = _outdir(args, os.path.join("runs", "theory"))
    xs = np.linspace(0.0, 1.0, args.grid)
    rows = []
    for level in range(1, args.levels + 1):
        net = build_sq_relu_net(level)
        err = np.abs(net(xs) - xs * xs)
        rows.append((level, float(err.max()), net.count_params()))
    with open(os.path.join(out, "sq_net.csv"), "w", encoding="utf-8") as fh:
        fh.write("levels,sup_error,params\n")
        for level, err, n in rows:
            fh.write(f"{level},{err!r},{n}\n")
    net = build_sq_relu_net(args.levels)
    plots.save_slice_curves(os.path.join(out, "sq_net.png"), xs,
                            {"approximant": net(xs), "x^2": xs * xs},
                            "x", "value", f"sq net, {args.levels} levels")
    lines = [f"{'levels':>7} {'sup error':>14} {'params':>8}"]
    for level, err, n in rows:
        lines.append(f"{level:>7} {err:>14.3e} {n:>8}")
    report = "\n".join(lines) + "\n"
    with open(os.path.join(out, "sq_net.txt"), "w", encoding="utf-8") as fh:
        fh.write(report)
    print(report, end="")
    return 0


def cmd_theory_paraboloid_net(args) -> int:
    out = _outdir(args, os.path.join("runs", "theory"))
    d = args.d
    net = build_paraboloid_relu_net(d, args.levels)
    spec = heat_paraboloid_dim(d)
    rng = RngStream(args.seed, STREAM_THEORY)
    batch = sample_lambda(spec, rng, args.grid, with_flat=False)
    raw = np.concatenate([batch.gamma, batch.x, batch.t[:, None]], axis=1)
    approx = net(raw)
    exact = solution_batch(spec, batch.gamma, batch.x, batch.t)
    err = float(np.abs(approx - exact).max())
    report = (f"paraboloid approximant d={d}, levels={args.levels}\n"
              f"structural parameters: {net.count_params()}\n"
              f"sup error over {args.grid} random domain points: {err:.3e}\n")
    with open(os.path.join(out, "paraboloid_net.txt"), "w", encoding="utf-8") as fh:
        fh.write(report)
    print(report, end="")
    return 0


def cmd_dim_sweep(args) -> int:
    out = _outdir(args, os.path.join("runs", "dim_sweep"))
    dims = [int(v) for v in args.dims.split(",")]
    rows = []
    for d in dims:
        spec = heat_paraboloid_dim(d)
        cfg = desk_config("heat_paraboloid") if args.desk else table_config("heat_paraboloid")
        cfg = dataclasses.replace(
            cfg, seed=args.seed, eval_every=args.eval_every, stop_l1=args.target,
            steps=args.max_steps, eval_batches=args.eval_batches,
            batch_size=args.batch_size or cfg.batch_size)
        net, log = train(cfg, spec=spec, verbose=not args.quiet)
        n_params = count_params(net)
        final = log.eval_rows()[-1]
        reached = final.l1_error <= args.target
        steps = final.step
        rows.append((d, spec.dim_in, n_params, steps, n_params * steps, reached))
    with open(os.path.join(out, "dim_sweep.csv"), "w", encoding="utf-8") as fh:
        fh.write("d,dim_in,params,steps,cost,reached_target\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    plots.save_dim_sweep(os.path.join(out, "dim_sweep.png"),
                         [r[1] for r in rows], [r[4] for r in rows],
                         f"cost to reach L1 {args.target:g}")
    lines = [f"{'d':>4} {'dim_in':>7} {'params':>9} {'steps':>7} {'cost':>14} {'hit':>4}"]
    for d, dim_in, n, s, c, ok in rows:
        lines.append(f"{d:>4} {dim_in:>7} {n:>9} {s:>7} {c:>14} {str(ok):>5}")
    report = "\n".join(lines) + "\n"
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report)
    print(report, end="")
    return 0


def _add_train_flags(sp) -> None:
    sp.add_argument("--problem", choices=PROBLEM_NAMES)
    sp.add_argument("--config", help="JSON config file; flags override it")
    sp.add_argument("--desk", action="store_true",
                    help="documented scaled-down profile (batch 4096, 4000 steps)")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--levels", type=int)
    sp.add_argument("--q", type=int)
    sp.add_argument("--chi", type=int, choices=(0, 1))
    sp.add_argument("--norm", choices=("batch", "layer", "none"))
    sp.add_argument("--lr", type=float)
    sp.add_argument("--min-lr", dest="min_lr", type=float)
    sp.add_argument("--decay", type=float)
    sp.add_argument("--patience", type=int)
    sp.add_argument("--weight-decay", dest="weight_decay", type=float)
    sp.add_argument("--em-steps", dest="em_steps", type=int)
    sp.add_argument("--eval-every", dest="eval_every", type=int)
    sp.add_argument("--eval-batches", dest="eval_batches", type=int)
    sp.add_argument("--eval-batch-size", dest="eval_batch_size", type=int)
    sp.add_argument("--mc-samples", dest="mc_samples", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--seeds", help="comma-separated seed list, e.g. 0,1,2,3")
    sp.add_argument("--out")
    sp.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kolnet",
        description="Learn parametric Kolmogorov PDE solution maps from simulated data.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("train", help="train one or more seeds and aggregate")
    _add_train_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on fresh points")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--problem", choices=PROBLEM_NAMES)
    sp.add_argument("--batch-size", dest="batch_size", type=int, default=4096)
    sp.add_argument("--mc-samples", dest="mc_samples", type=int, default=1 << 14)
    sp.add_argument("--seed", type=int, default=1000)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("greeks", help="network Greeks vs the closed form")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--problem", choices=PROBLEM_NAMES)
    sp.add_argument("--gamma-sigma", dest="gamma_sigma", type=float, default=0.35)
    sp.add_argument("--strike", type=float, default=11.0)
    sp.add_argument("--t", type=float, default=0.5)
    sp.add_argument("--grid", type=int, default=51)
    sp.add_argument("--seed", type=int, default=1000)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_greeks)

    sp = sub.add_parser("calibrate", help="fit gamma to observations")
    sp.add_argument("--problem", choices=PROBLEM_NAMES, required=True)
    sp.add_argument("--checkpoint", help="use a trained network (default: closed form)")
    sp.add_argument("--data", help="CSV with columns x_0..x_{d-1},t,u")
    sp.add_argument("--synthetic", help="comma-separated true gamma for synthetic data")
    sp.add_argument("--n-points", dest="n_points", type=int, default=50)
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--lr", type=float, default=0.05)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("count-params", help="exact trainable parameter count")
    sp.add_argument("--problem", choices=PROBLEM_NAMES)
    sp.add_argument("--p", type=int, help="input dimension override")
    sp.add_argument("--levels", type=int, default=4)
    sp.add_argument("--q", type=int, default=5)
    sp.add_argument("--chi", type=int, choices=(0, 1), default=1)
    sp.add_argument("--norm", choices=("batch", "layer", "none"), default="batch")
    sp.add_argument("--feedforward", action="store_true")
    sp.set_defaults(func=cmd_count_params)

    theory = sub.add_parser("theory", help="executable checks of the paper-level identities")
    tsub = theory.add_subparsers(dest="theory_command", required=True)

    sp = tsub.add_parser("em-rate", help="strong Euler-Maruyama rate on coupled paths")
    sp.add_argument("--problem", choices=PROBLEM_NAMES, default="black_scholes")
    sp.add_argument("--m-grid", dest="m_grid", default="4,8,16,32,64,128,256")
    sp.add_argument("--paths", type=int, default=10000)
    sp.add_argument("--t", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=3)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_theory_em_rate)

    sp = tsub.add_parser("regression", help="Feynman-Kac regression identity z-scores")
    sp.add_argument("--problem", choices=PROBLEM_NAMES, default="heat_paraboloid")
    sp.add_argument("--points", type=int, default=100)
    sp.add_argument("--m", type=int, default=100000)
    sp.add_argument("--seed", type=int, default=3)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_theory_regression)

    sp = tsub.add_parser("sq-net", help="dyadic ReLU approximant of x^2")
    sp.add_argument("--levels", type=int, default=3)
    sp.add_argument("--grid", type=int, default=100001)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_theory_sq_net)

    sp = tsub.add_parser("paraboloid-net", help="constructive net for the paraboloid map")
    sp.add_argument("--d", type=int, default=1)
    sp.add_argument("--levels", type=int, default=6)
    sp.add_argument("--grid", type=int, default=20000)
    sp.add_argument("--seed", type=int, default=3)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_theory_paraboloid_net)

    sp = sub.add_parser("dim-sweep", help="cost to reach a target error across dimensions")
    sp.add_argument("--dims", default="1,2,3,4,5")
    sp.add_argument("--target", type=float, default=1e-2)
    sp.add_argument("--eval-every", dest="eval_every", type=int, default=250)
    sp.add_argument("--eval-batches", dest="eval_batches", type=int, default=4)
    sp.add_argument("--max-steps", dest="max_steps", type=int, default=4000)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--desk", action="store_true")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--quiet", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_dim_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, DivergenceError, FileNotFoundError,
            NotADirectoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
