"""Command-line front end: simulate / estimate / montecarlo / sweep-lambda / cluster.

Every command is deterministic for a fixed --seed: raw CSV outputs are
byte-identical across runs and worker counts.  Exit codes: 0 success,
1 estimator failure, 2 input error.  RVOLEST_THREADS is the fallback for
--threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .clustering import MergeMode, kmeans, merge_consecutive, residuals, suggest_k
from .estimator import OptimizerOptions, estimate
from .exceptions import RvolestError
from .likelihood import ObservationPath, RobustConfig
from .model import make_builtin
from .montecarlo import (
    ExperimentPlan,
    run_plan,
    write_lambda_sweep_csv,
    write_raw_theta_csv,
    write_raw_u_csv,
    write_summary_csv,
)
from .simulator import (
    PRESET_NAMES,
    Scenario,
    get_preset,
    scenario_from_dict,
    scenario_to_dict,
    simulate,
    with_seed,
)


class InputError(Exception):
    """User-input problem; maps to exit code 2."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _resolve_threads(value) -> int:
    if value is not None:
        return max(1, int(value))
    env = os.environ.get("RVOLEST_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise InputError(f"RVOLEST_THREADS is not an integer: {env!r}") from exc
    return 1


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise InputError(f"{flag} expects comma-separated numbers, got {text!r}") from exc


def _load_scenario(args) -> Scenario:
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(
                f"config {args.config} is not valid JSON "
                f"(line {exc.lineno}, column {exc.colno}): {exc.msg}"
            ) from exc
        try:
            scenario = scenario_from_dict(data)
        except ValueError as exc:
            raise InputError(str(exc)) from exc
    elif getattr(args, "preset", None):
        if args.preset not in PRESET_NAMES:
            raise InputError(
                f"unknown preset {args.preset!r}; available: {', '.join(PRESET_NAMES)}"
            )
        scenario = get_preset(
            args.preset,
            n=args.n,
            spike_prob=args.spike_prob,
            spike_sigma2=args.spike_sigma2,
            jump_rate_factor=args.jump_factor,
        )
    else:
        raise InputError("provide --preset or --config")
    if args.seed is not None:
        scenario = with_seed(scenario, args.seed)
    return scenario


def _make_configs(variants: str, lambdas: str) -> list[RobustConfig]:
    configs: list[RobustConfig] = []
    lam_values = _parse_float_list(lambdas, "--lambda")
    for name in [v.strip() for v in variants.split(",") if v.strip()]:
        if name == "gqlf":
            configs.append(RobustConfig.gqlf())
        elif name == "dp":
            configs.extend(RobustConfig.density_power(lam) for lam in lam_values)
        elif name == "holder":
            configs.extend(RobustConfig.hoelder(lam) for lam in lam_values)
        else:
            raise InputError(f"unknown variant {name!r} (gqlf, dp, holder)")
    if not configs:
        raise InputError("no estimator configured")
    return configs


def _single_config(args) -> RobustConfig:
    name = args.variant
    if name == "gqlf":
        return RobustConfig.gqlf()
    lam = float(args.lam)
    if name == "dp":
        return RobustConfig.density_power(lam)
    if name == "holder":
        return RobustConfig.hoelder(lam)
    raise InputError(f"unknown variant {name!r} (gqlf, dp, holder)")


def write_path_csv(path: ObservationPath, filename: str) -> None:
    cov_dim = 0 if path.covariates is None else path.covariates.shape[1]
    header = (
        ["j", "t"]
        + [f"X_{i+1}" for i in range(cov_dim)]
        + [f"Y_{i+1}" for i in range(path.d)]
    )
    with open(filename, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for j in range(path.n + 1):
            row = [str(j), _fmt(path.times[j])]
            if cov_dim:
                row += [_fmt(v) for v in path.covariates[j]]
            row += [_fmt(v) for v in path.responses[j]]
            writer.writerow(row)


def read_path_csv(filename: str, T: float | None = None) -> ObservationPath:
    """Parse a path.csv; raises InputError with line/field diagnostics."""
    try:
        with open(filename, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise InputError(f"{filename}: empty file") from None
            x_cols = [i for i, name in enumerate(header) if name.startswith("X_")]
            y_cols = [i for i, name in enumerate(header) if name.startswith("Y_")]
            if "t" not in header or not y_cols:
                raise InputError(f"{filename}: header must contain 't' and 'Y_*' columns")
            t_col = header.index("t")
            times, xs, ys = [], [], []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise InputError(
                        f"{filename}:{lineno}: expected {len(header)} fields, got {len(row)}"
                    )
                try:
                    times.append(float(row[t_col]))
                    xs.append([float(row[i]) for i in x_cols])
                    ys.append([float(row[i]) for i in y_cols])
                except ValueError as exc:
                    raise InputError(f"{filename}:{lineno}: {exc}") from None
    except OSError as exc:
        raise InputError(f"cannot read {filename}: {exc}") from exc
    if len(times) < 2:
        raise InputError(f"{filename}: need at least two observations")
    n = len(times) - 1
    horizon = T if T is not None else times[-1]
    try:
        return ObservationPath(
            n=n,
            T=horizon,
            times=np.asarray(times),
            covariates=np.asarray(xs) if x_cols else None,
            responses=np.asarray(ys),
        )
    except ValueError as exc:
        raise InputError(f"{filename}: {exc}") from exc


def write_truth_csv(bundle, filename: str) -> None:
    with open(filename, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "value"])
        for t in bundle.jump_times:
            writer.writerow(["jump_time", _fmt(t)])
        for j in bundle.spike_indices:
            writer.writerow(["spike_index", str(int(j))])


def _result_to_dict(res, model_name: str, n: int, T: float) -> dict:
    out = {
        "model": model_name,
        "n": n,
        "T": T,
        "variant": res.config.variant.value,
        "lambda": res.config.lam if res.config.variant.value != "gqlf" else None,
        "theta_hat": [float(v) for v in res.theta_hat],
        "objective_value": res.objective_value,
        "gamma_hat": res.gamma_hat.tolist(),
        "sigma_hat": res.sigma_hat.tolist(),
        "fisher_hat": res.fisher_hat.tolist(),
        "avar": None if res.avar is None else res.avar.tolist(),
        "ci": None if res.ci is None else res.ci.tolist(),
        "alpha": res.alpha,
        "converged": res.converged,
        "iterations": res.iterations,
        "projected_grad_norm": res.projected_grad_norm,
        "boundary_active": [bool(b) for b in res.boundary_active],
        "used_fallback": res.used_fallback,
        "negative_variance": res.negative_variance,
        "taper_diagnostic": res.taper_diagnostic,
    }
    if res.u_stat is not None:
        out["u_stat"] = [float(v) for v in res.u_stat]
    return out


def cmd_simulate(args) -> int:
    scenario = _load_scenario(args)
    bundle = simulate(scenario)
    os.makedirs(args.out, exist_ok=True)
    write_path_csv(bundle.observed, os.path.join(args.out, "path.csv"))
    write_truth_csv(bundle, os.path.join(args.out, "truth.csv"))
    with open(os.path.join(args.out, "scenario.json"), "w") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {args.out}/path.csv ({scenario.n + 1} rows)")
    return 0


def _estimation_inputs(args):
    """(path, model, model_name) from --path/--model or --preset."""
    if args.path:
        if not args.model:
            raise InputError("--path requires --model")
        model = make_builtin(args.model)
        path = read_path_csv(args.path, T=args.T)
        return path, model, args.model
    scenario = _load_scenario(args)
    bundle = simulate(scenario)
    model = make_builtin(scenario.model.name)
    return bundle.observed, model, scenario.model.name


def cmd_estimate(args) -> int:
    path, model, model_name = _estimation_inputs(args)
    config = _single_config(args)
    opts = OptimizerOptions(
        initial=np.asarray(_parse_float_list(args.init, "--init")) if args.init else None,
        tol=args.tol,
        max_iters=args.max_iters,
        fallback=not args.no_fallback,
    )
    theta0 = (
        np.asarray(_parse_float_list(args.true_theta, "--true-theta"))
        if args.true_theta
        else None
    )
    res = estimate(path, model, config, opts, alpha=args.alpha, theta0=theta0)
    os.makedirs(args.out, exist_ok=True)
    out_file = os.path.join(args.out, "estimate.json")
    with open(out_file, "w") as fh:
        json.dump(_result_to_dict(res, model_name, path.n, path.T), fh, indent=2)
        fh.write("\n")
    theta_txt = ", ".join(_fmt(v) for v in res.theta_hat)
    print(f"theta_hat = [{theta_txt}] (converged={res.converged}); wrote {out_file}")
    return 0


def _build_plan(args, configs) -> ExperimentPlan:
    scenario = _load_scenario(args)
    return ExperimentPlan(
        scenario=scenario,
        estimators=tuple(configs),
        replications=args.reps,
        alpha=args.alpha,
        threads=_resolve_threads(args.threads),
    )


def cmd_montecarlo(args) -> int:
    configs = _make_configs(args.variant, args.lam)
    plan = _build_plan(args, configs)
    table = run_plan(plan)
    os.makedirs(args.out, exist_ok=True)
    write_summary_csv(table, os.path.join(args.out, "summary.csv"))
    write_raw_theta_csv(table, os.path.join(args.out, "raw_theta.csv"))
    write_raw_u_csv(table, os.path.join(args.out, "raw_u.csv"))
    print(f"ran {plan.replications} replications x {len(configs)} estimators; "
          f"wrote summary.csv, raw_theta.csv, raw_u.csv in {args.out}")
    return 0


def cmd_sweep_lambda(args) -> int:
    if args.variant not in ("dp", "holder"):
        raise InputError("sweep-lambda supports --variant dp or holder")
    configs = _make_configs(args.variant, args.lam)
    plan = _build_plan(args, configs)
    table = run_plan(plan)
    os.makedirs(args.out, exist_ok=True)
    write_lambda_sweep_csv(table, os.path.join(args.out, "lambda_sweep.csv"))
    write_summary_csv(table, os.path.join(args.out, "summary.csv"))
    print(f"wrote lambda_sweep.csv ({len(configs)} lambdas) in {args.out}")
    return 0


def cmd_cluster(args) -> int:
    path, model, _ = _estimation_inputs(args)
    config = _single_config(args)
    res = estimate(path, model, config)
    eps_hat = residuals(path, model, res.theta_hat)

    if args.k is not None:
        chosen_k = args.k
        sweep = None
    else:
        lo, _, hi = args.k_range.partition(":")
        try:
            k_range = range(int(lo), int(hi) + 1)
        except ValueError as exc:
            raise InputError(f"--k-range expects LO:HI, got {args.k_range!r}") from exc
        sweep = suggest_k(eps_hat, k_range, seed=args.kmeans_seed)
        chosen_k = sweep.suggested_k

    part = kmeans(eps_hat, chosen_k, seed=args.kmeans_seed)
    mode = MergeMode(args.merge)
    part = merge_consecutive(part, mode)

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "clusters.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["j", "t_j", "eps_hat", "label", "in_D"])
        in_d = part.in_d
        for j in range(path.n):
            writer.writerow([
                str(j + 1), _fmt(path.times[j + 1]), _fmt(eps_hat[j]),
                str(int(part.labels[j])), str(int(in_d[j])),
            ])
    if sweep is not None:
        with open(os.path.join(args.out, "k_sweep.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["K", "size_D", "log_size_D"])
            for k, size in zip(sweep.ks, sweep.d_sizes):
                writer.writerow([str(k), str(size), _fmt(np.log(max(size, 1)))])
    flagged = int(part.in_d.sum())
    print(f"K={chosen_k}: flagged {flagged} of {path.n} increments; "
          f"wrote clusters.csv in {args.out}")
    return 0


def _add_scenario_flags(sub, with_n=True):
    sub.add_argument("--preset", help=f"one of: {', '.join(PRESET_NAMES)}")
    sub.add_argument("--config", help="scenario JSON file")
    if with_n:
        sub.add_argument("--n", type=int, default=5000, help="observations (presets)")
    sub.add_argument("--spike-prob", type=float, default=0.01,
                     help="spike probability for spike presets")
    sub.add_argument("--spike-sigma2", type=float, default=1.0,
                     help="spike variance for spike presets")
    sub.add_argument("--jump-factor", type=float, default=0.01,
                     help="jump intensity as a fraction of n for jump presets")


def _add_estimator_flags(sub):
    sub.add_argument("--variant", default="dp", help="gqlf | dp | holder")
    sub.add_argument("--lambda", dest="lam", default="0.5", help="tapering parameter")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rvolest",
        description="Robust quasi-likelihood estimation of diffusion "
                    "coefficients from contaminated high-frequency data.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="scenario seed override")
    common.add_argument("--out", default="rvolest-out", help="output directory")
    common.add_argument("--threads", type=int, default=None,
                        help="worker processes (fallback: RVOLEST_THREADS, then 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", parents=[common],
                           help="generate a contaminated path")
    _add_scenario_flags(p_sim)
    p_sim.set_defaults(handler=cmd_simulate)

    p_est = sub.add_parser("estimate", parents=[common],
                           help="fit one estimator on a path")
    _add_scenario_flags(p_est)
    p_est.add_argument("--path", help="path.csv produced by `rvolest simulate`")
    p_est.add_argument("--model", help="model name when using --path")
    p_est.add_argument("--T", type=float, default=None, help="horizon override for --path")
    _add_estimator_flags(p_est)
    p_est.add_argument("--alpha", type=float, default=0.05)
    p_est.add_argument("--init", help="comma list: optimizer start")
    p_est.add_argument("--true-theta", help="comma list: adds standardized statistics")
    p_est.add_argument("--max-iters", type=int, default=500)
    p_est.add_argument("--tol", type=float, default=1e-8)
    p_est.add_argument("--no-fallback", action="store_true",
                       help="disable the Nelder-Mead fallback")
    p_est.set_defaults(handler=cmd_estimate)

    p_mc = sub.add_parser("montecarlo", parents=[common],
                          help="replicate simulate+estimate, emit summary tables")
    _add_scenario_flags(p_mc)
    p_mc.add_argument("--reps", type=int, default=200)
    p_mc.add_argument("--variant", default="gqlf,dp,holder")
    p_mc.add_argument("--lambda", dest="lam", default="0.1,0.5,0.9")
    p_mc.add_argument("--alpha", type=float, default=0.05)
    p_mc.set_defaults(handler=cmd_montecarlo)

    p_sw = sub.add_parser("sweep-lambda", parents=[common],
                          help="mean/sd of a robust estimator across a lambda grid")
    _add_scenario_flags(p_sw)
    p_sw.add_argument("--reps", type=int, default=200)
    p_sw.add_argument("--variant", default="dp")
    p_sw.add_argument("--lambda", dest="lam",
                      default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")
    p_sw.add_argument("--alpha", type=float, default=0.05)
    p_sw.set_defaults(handler=cmd_sweep_lambda)

    p_cl = sub.add_parser("cluster", parents=[common],
                          help="K-means residual classification of increments")
    _add_scenario_flags(p_cl)
    p_cl.add_argument("--path", help="path.csv to cluster")
    p_cl.add_argument("--model", help="model name when using --path")
    p_cl.add_argument("--T", type=float, default=None)
    _add_estimator_flags(p_cl)
    p_cl.add_argument("--k", type=int, default=None, help="fixed cluster count")
    p_cl.add_argument("--k-range", default="2:10", help="scan range LO:HI for suggest-K")
    p_cl.add_argument("--kmeans-seed", type=int, default=0)
    p_cl.add_argument("--merge", default="off", choices=["spike-pair", "off"])
    p_cl.set_defaults(handler=cmd_cluster)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RvolestError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
