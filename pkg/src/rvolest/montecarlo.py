"""Replication harness: per-estimator means, spreads, coverage, CSV emission.

Each replication r draws its own (Brownian, Jumps, Spikes) streams keyed by
(plan seed, r), runs every configured estimator on the observed path, and
records the estimate, the standardized statistic, the coverage indicator of
the level-(1 - alpha) interval against theta0, timing, and failure flags.
Replications are independent, so the pool size changes wall time only; raw
result matrices are identical for any worker count.

Failed replications (factorization or singular-curvature errors) are excluded
from the moment columns and counted; non-converged fits keep their estimate
but are excluded from coverage.
"""

from __future__ import annotations

import csv
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .estimator import OptimizerOptions, estimate
from .exceptions import RvolestError
from .likelihood import RobustConfig, Variant
from .model import make_builtin
from .simulator import Scenario, simulate


@dataclass(frozen=True)
class ExperimentPlan:
    scenario: Scenario
    estimators: tuple[RobustConfig, ...]
    replications: int
    alpha: float = 0.05
    threads: int = 1
    optimizer: Optional[OptimizerOptions] = None
    outputs: Optional[str] = None

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("need at least one replication")
        object.__setattr__(self, "estimators", tuple(self.estimators))


def estimator_label(config: RobustConfig) -> tuple[str, float]:
    """(variant, lambda) pair used in CSV rows; lambda is NaN for gqlf."""
    if config.variant is Variant.GQLF:
        return "gqlf", float("nan")
    return config.variant.value, config.lam


@dataclass
class SummaryTable:
    plan: ExperimentPlan
    theta0: np.ndarray
    labels: list[tuple[str, float]]
    raw_theta: np.ndarray      # (M, n_est, p); NaN where the fit failed
    raw_u: np.ndarray          # (M, n_est, p)
    cover: np.ndarray          # (M, n_est, p); NaN = excluded
    converged: np.ndarray      # (M, n_est) bool
    failed: np.ndarray         # (M, n_est) bool
    times: np.ndarray          # (M, n_est) seconds

    @property
    def p(self) -> int:
        return self.theta0.shape[0]

    def mean(self) -> np.ndarray:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.nanmean(self.raw_theta, axis=0)

    def sd(self) -> np.ndarray:
        counts = np.sum(~np.isnan(self.raw_theta), axis=0)
        if self.raw_theta.shape[0] < 2:
            return np.zeros(counts.shape)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            out = np.nanstd(self.raw_theta, axis=0, ddof=1)
        return np.where(counts < 2, 0.0, out)

    def coverage(self) -> np.ndarray:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.nanmean(self.cover, axis=0)

    def failure_counts(self) -> np.ndarray:
        return self.failed.sum(axis=0)

    def mean_time(self) -> np.ndarray:
        return self.times.mean(axis=0)


def _run_replication(args) -> dict:
    scenario, estimators, alpha, opts, rep = args
    bundle = simulate(scenario, replication=rep)
    model = make_builtin(scenario.model.name)
    theta0 = scenario.model.theta0_array()
    p = theta0.shape[0]
    out = {
        "theta": np.full((len(estimators), p), np.nan),
        "u": np.full((len(estimators), p), np.nan),
        "cover": np.full((len(estimators), p), np.nan),
        "converged": np.zeros(len(estimators), dtype=bool),
        "failed": np.zeros(len(estimators), dtype=bool),
        "time": np.zeros(len(estimators)),
    }
    for e, config in enumerate(estimators):
        t0 = time.perf_counter()
        try:
            res = estimate(bundle.observed, model, config, opts,
                           alpha=alpha, theta0=theta0)
        except RvolestError:
            out["failed"][e] = True
            out["time"][e] = time.perf_counter() - t0
            continue
        out["time"][e] = time.perf_counter() - t0
        out["theta"][e] = res.theta_hat
        out["converged"][e] = res.converged
        if res.u_stat is not None:
            out["u"][e] = res.u_stat
        if res.ci is not None and res.converged:
            lo, hi = res.ci[:, 0], res.ci[:, 1]
            covered = (lo <= theta0) & (theta0 <= hi)
            ok = np.isfinite(lo) & np.isfinite(hi)
            out["cover"][e] = np.where(ok, covered.astype(float), np.nan)
    return out


def run_plan(plan: ExperimentPlan) -> SummaryTable:
    """Execute the plan; deterministic for a given (scenario seed, plan)."""
    theta0 = plan.scenario.model.theta0_array()
    m, n_est, p = plan.replications, len(plan.estimators), theta0.shape[0]
    jobs = [
        (plan.scenario, plan.estimators, plan.alpha, plan.optimizer, rep)
        for rep in range(m)
    ]
    if plan.threads > 1:
        with ProcessPoolExecutor(max_workers=plan.threads) as pool:
            records = list(pool.map(_run_replication, jobs, chunksize=1))
    else:
        records = [_run_replication(job) for job in jobs]

    table = SummaryTable(
        plan=plan,
        theta0=theta0,
        labels=[estimator_label(c) for c in plan.estimators],
        raw_theta=np.stack([r["theta"] for r in records]),
        raw_u=np.stack([r["u"] for r in records]),
        cover=np.stack([r["cover"] for r in records]),
        converged=np.stack([r["converged"] for r in records]),
        failed=np.stack([r["failed"] for r in records]),
        times=np.stack([r["time"] for r in records]),
    )
    return table


def coverage_curve(plan: ExperimentPlan) -> list[tuple[float, int, float]]:
    """(lambda, coordinate, coverage frequency) rows across the plan's lambda grid."""
    table = run_plan(plan)
    cov = table.coverage()
    rows = []
    for e, (variant, lam) in enumerate(table.labels):
        if variant == "gqlf":
            continue
        for i in range(table.p):
            rows.append((lam, i + 1, float(cov[e, i])))
    return rows


# ---------------------------------------------------------------------------
# CSV emission (full double precision, deterministic ordering)
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float) and np.isnan(x):
        return "nan"
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _write_rows(path: str, header: list[str], rows) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_summary_csv(table: SummaryTable, path: str) -> None:
    mean, sd, cov = table.mean(), table.sd(), table.coverage()
    fails, mtime = table.failure_counts(), table.mean_time()
    rows = []
    for e, (variant, lam) in enumerate(table.labels):
        for i in range(table.p):
            rows.append([
                variant, float(lam), i + 1,
                float(mean[e, i]), float(sd[e, i]), float(cov[e, i]),
                int(fails[e]), float(mtime[e]),
            ])
    _write_rows(path, ["estimator", "lambda", "coord", "mean", "sd",
                       "coverage", "failures", "mean_time_s"], rows)


def write_raw_theta_csv(table: SummaryTable, path: str) -> None:
    p = table.p
    header = ["rep", "estimator", "lambda"] + [f"theta_{i+1}" for i in range(p)]
    rows = []
    for rep in range(table.raw_theta.shape[0]):
        for e, (variant, lam) in enumerate(table.labels):
            rows.append([rep, variant, float(lam)]
                        + [float(v) for v in table.raw_theta[rep, e]])
    _write_rows(path, header, rows)


def write_raw_u_csv(table: SummaryTable, path: str) -> None:
    p = table.p
    header = ["rep", "estimator", "lambda"] + [f"u_{i+1}" for i in range(p)]
    rows = []
    for rep in range(table.raw_u.shape[0]):
        for e, (variant, lam) in enumerate(table.labels):
            rows.append([rep, variant, float(lam)]
                        + [float(v) for v in table.raw_u[rep, e]])
    _write_rows(path, header, rows)


def write_lambda_sweep_csv(table: SummaryTable, path: str) -> None:
    mean, sd = table.mean(), table.sd()
    rows = []
    for e, (variant, lam) in enumerate(table.labels):
        if variant == "gqlf":
            continue
        for i in range(table.p):
            rows.append([float(lam), i + 1, float(mean[e, i]), float(sd[e, i])])
    _write_rows(path, ["lambda", "coord", "mean", "sd"], rows)
