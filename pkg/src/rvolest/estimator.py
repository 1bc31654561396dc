"""Box-constrained maximization of a quasi-likelihood and plug-in inference.

The maximizer is projected quasi-Newton (L-BFGS-B) driven by the analytic
gradient, with a projected Nelder-Mead fallback when factorization failures
occur near the parameter-box boundary.  Plug-in asymptotic matrices replace
(1/T) integral g(X_t, theta_0) dt by (1/n) sum_j g(x_{j-1}, theta_hat):

  fisher   I_kl      = avg  v_kl / 2
  dp       Gamma_kl  = K_lam/(lam+1)   * avg dd^{-lam/2} (v_kl + lam^2/2 t_k t_l) / 2
           Sigma_kl  = K_2lam/(2lam+1) * avg dd^{-lam}   v_kl / 2
                       + eps'(lam)/4   * avg dd^{-lam}   t_k t_l
  hoelder  Gamma_kl  = K_lam/(lam+1)   * avg dd^{-lam/(2(lam+1))} v_kl / 2
           Sigma_kl  = K_2lam/(2lam+1) * avg dd^{-lam/(lam+1)}    v_kl / 2
                       + eps''(lam)    * avg dd^{-lam/(lam+1)}    t_k t_l

with t_k = tr(S^{-1} d_k S) and v_kl = tr(S^{-1} d_k S S^{-1} d_l S).  Both
Gamma and Sigma tend to the Fisher matrix as lam -> 0.  The sandwich
avar = Gamma^{-1} Sigma Gamma^{-1} feeds the normal confidence intervals
theta_hat_i +/- z_{1-alpha/2} sqrt(avar_ii / n).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.optimize
from scipy.stats import norm

from .exceptions import CholeskyFailure, SingularGamma
from .likelihood import (
    ObservationPath,
    RobustConfig,
    Variant,
    covariate_block,
    value_and_grad,
)
from .mathcore import chol_spd, eps_dprime, eps_prime, k_const
from .model import ModelSpec


@dataclass(frozen=True)
class OptimizerOptions:
    """Knobs for the box-constrained maximizer."""

    initial: Optional[np.ndarray] = None
    tol: float = 1e-8
    max_iters: int = 500
    fallback: bool = True


@dataclass
class EstimationResult:
    theta_hat: np.ndarray
    objective_value: float
    config: RobustConfig
    gamma_hat: np.ndarray
    sigma_hat: np.ndarray
    fisher_hat: np.ndarray
    avar: np.ndarray | None
    ci: np.ndarray | None          # (p, 2) lower/upper, NaN when omitted
    alpha: float
    converged: bool
    iterations: int
    projected_grad_norm: float
    boundary_active: np.ndarray    # bool per coordinate
    used_fallback: bool
    negative_variance: list[int] = field(default_factory=list)
    u_stat: np.ndarray | None = None   # sqrt(n)(theta_hat - theta0)/sqrt(avar_ii)
    taper_diagnostic: float | None = None


def check_taper_schedule(n: int, lam: float, kappa: float = 1.0, T: float = 1.0) -> float:
    """sqrt(n) h^kappa / lambda with h = T/n; large values warn lambda is too
    small for this sample size under jump regularity kappa."""
    if n < 1 or lam <= 0 or kappa <= 0.5:
        raise ValueError("need n >= 1, lambda > 0, kappa > 1/2")
    return float(np.sqrt(n) * (T / n) ** kappa / lam)


def _trace_stats(path: ObservationPath, model: ModelSpec, theta: np.ndarray):
    """Per-increment log det, t vector and v matrix at (x_{j-1}, theta).

    Returns (log_det (n,), t (n, p), v (n, p, p)); for d = 1, v = t (x) t.
    """
    x_block = covariate_block(path, model)
    n, p = path.n, model.p
    if model.d == 1:
        s = np.asarray(model.s_values(x_block, theta), dtype=float)
        bad = ~(np.isfinite(s) & (s > 0))
        if np.any(bad):
            raise CholeskyFailure(index=int(np.argmax(bad)) + 1)
        t = model.ds_values(x_block, theta) / s[:, None]
        v = t[:, :, None] * t[:, None, :]
        return np.log(s), t, v
    s_all = model.s_values(x_block, theta).reshape(n, model.d, model.d)
    ds_all = model.ds_values(x_block, theta).reshape(n, p, model.d, model.d)
    log_det = np.empty(n)
    t = np.empty((n, p))
    v = np.empty((n, p, p))
    for j in range(n):
        lower = chol_spd(s_all[j], index=j + 1)
        log_det[j] = 2.0 * float(np.log(np.diagonal(lower)).sum())
        m = np.empty((p, model.d, model.d))
        for k in range(p):
            m[k] = np.linalg.solve(lower.T, np.linalg.solve(lower, ds_all[j, k]))
            t[j, k] = np.trace(m[k])
        for k in range(p):
            for l in range(k, p):
                v[j, k, l] = v[j, l, k] = np.trace(m[k] @ m[l])
    return log_det, t, v


def plugin_matrices(path, model, theta_hat, config: RobustConfig):
    """(gamma_hat, sigma_hat, fisher_hat) at theta_hat for the given variant.

    For the plain GQLF both Gamma and Sigma coincide with the Fisher matrix
    (the lam -> 0 limit of either robust family).
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    log_det, t, v = _trace_stats(path, model, theta_hat)
    n = path.n
    outer_t = t[:, :, None] * t[:, None, :]
    fisher = 0.5 * v.mean(axis=0)

    if config.variant is Variant.GQLF:
        return fisher.copy(), fisher.copy(), fisher

    lam, d = config.lam, model.d
    k1 = k_const(lam, d)
    k2 = k_const(2.0 * lam, d)
    if config.variant is Variant.DENSITY_POWER:
        w_gamma = np.exp(-0.5 * lam * log_det)
        w_sigma = np.exp(-lam * log_det)
        gamma = (k1 / (lam + 1.0)) * 0.5 * np.einsum(
            "j,jkl->kl", w_gamma, v + 0.5 * lam**2 * outer_t
        ) / n
        sigma = (
            (k2 / (2.0 * lam + 1.0)) * 0.5 * np.einsum("j,jkl->kl", w_sigma, v) / n
            + 0.25 * eps_prime(lam, d) * np.einsum("j,jkl->kl", w_sigma, outer_t) / n
        )
    else:
        w_gamma = np.exp(-0.5 * lam / (lam + 1.0) * log_det)
        w_sigma = np.exp(-lam / (lam + 1.0) * log_det)
        gamma = (k1 / (lam + 1.0)) * 0.5 * np.einsum("j,jkl->kl", w_gamma, v) / n
        sigma = (
            (k2 / (2.0 * lam + 1.0)) * 0.5 * np.einsum("j,jkl->kl", w_sigma, v) / n
            + eps_dprime(lam, d) * np.einsum("j,jkl->kl", w_sigma, outer_t) / n
        )
    return 0.5 * (gamma + gamma.T), 0.5 * (sigma + sigma.T), fisher


def sandwich_avar(gamma: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Gamma^{-1} Sigma Gamma^{-1}; raises SingularGamma when not invertible."""
    try:
        ginv = np.linalg.inv(gamma)
    except np.linalg.LinAlgError:
        raise SingularGamma("plug-in curvature matrix is singular") from None
    if not np.all(np.isfinite(ginv)) or np.linalg.cond(gamma) > 1e14:
        raise SingularGamma("plug-in curvature matrix is numerically singular")
    avar = ginv @ sigma @ ginv
    return 0.5 * (avar + avar.T)


def confidence_intervals(
    theta_hat: np.ndarray,
    gamma: np.ndarray,
    sigma: np.ndarray,
    n: int,
    alpha: float = 0.05,
    theta0: Optional[np.ndarray] = None,
):
    """Per-coordinate normal intervals from the sandwich variance.

    Returns (ci, avar, u_stat, negative_variance).  Coordinates with a
    negative sandwich diagonal get NaN bounds and are listed in
    negative_variance rather than receiving a fabricated interval.  u_stat is
    the standardized statistic sqrt(n)(theta_hat - theta0)/sqrt(avar_ii),
    available in simulation mode (theta0 supplied).
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    avar = sandwich_avar(gamma, sigma)
    diag = np.diagonal(avar)
    negative = [int(i) for i in np.flatnonzero(diag < 0.0)]
    half = np.full_like(theta_hat, np.nan)
    ok = diag >= 0.0
    z = float(norm.ppf(1.0 - alpha / 2.0))
    half[ok] = z * np.sqrt(diag[ok] / n)
    ci = np.column_stack([theta_hat - half, theta_hat + half])
    u_stat = None
    if theta0 is not None:
        theta0 = np.asarray(theta0, dtype=float)
        u_stat = np.full_like(theta_hat, np.nan)
        pos = diag > 0.0
        u_stat[pos] = np.sqrt(n) * (theta_hat[pos] - theta0[pos]) / np.sqrt(diag[pos])
    return ci, avar, u_stat, negative


def _projected_grad(theta, grad, lower, upper) -> np.ndarray:
    """Gradient with blocked (infeasible-improving) components zeroed out."""
    pg = grad.copy()
    at_lower = theta <= lower + 1e-12 * (1.0 + np.abs(lower))
    at_upper = theta >= upper - 1e-12 * (1.0 + np.abs(upper))
    pg[at_lower & (pg < 0)] = 0.0
    pg[at_upper & (pg > 0)] = 0.0
    return pg


def estimate(
    path: ObservationPath,
    model: ModelSpec,
    config: RobustConfig,
    opts: OptimizerOptions | None = None,
    alpha: float = 0.05,
    theta0: Optional[np.ndarray] = None,
    kappa: float = 1.0,
) -> EstimationResult:
    """Maximize the configured objective over the model's parameter box.

    Deterministic: identical inputs give an identical result.  theta0 (the
    true value, simulation mode) only adds the standardized statistic.
    """
    opts = opts or OptimizerOptions()
    box = model.box
    start = box.clamp(opts.initial if opts.initial is not None else box.initial)

    def neg_val_grad(theta):
        val, grad = value_and_grad(path, model, theta, config)
        return -val, -grad

    used_fallback = False
    iterations = 0
    try:
        res = scipy.optimize.minimize(
            neg_val_grad,
            start,
            jac=True,
            method="L-BFGS-B",
            bounds=list(zip(box.lower, box.upper)),
            options={"maxiter": opts.max_iters, "gtol": opts.tol, "ftol": 1e-14},
        )
        theta_hat = box.clamp(res.x)
        iterations = int(res.nit)
        opt_success = bool(res.success)
    except CholeskyFailure:
        if not opts.fallback:
            raise
        used_fallback = True

        def nm_fun(theta):
            clipped = box.clamp(theta)
            penalty = 1e6 * float(np.sum((theta - clipped) ** 2))
            try:
                val, _ = value_and_grad(path, model, clipped, config)
            except CholeskyFailure:
                return 1e100
            return -val + penalty

        res = scipy.optimize.minimize(
            nm_fun,
            start,
            method="Nelder-Mead",
            options={
                "maxiter": 20 * opts.max_iters,
                "xatol": 1e-9,
                "fatol": 1e-12,
            },
        )
        theta_hat = box.clamp(res.x)
        iterations = int(res.nit)
        opt_success = bool(res.success)

    value, grad = value_and_grad(path, model, theta_hat, config)
    pg = _projected_grad(theta_hat, grad, box.lower, box.upper)
    pg_norm = float(np.max(np.abs(pg))) if pg.size else 0.0
    converged = opt_success or pg_norm <= opts.tol
    boundary = (theta_hat <= box.lower + 1e-10) | (theta_hat >= box.upper - 1e-10)

    gamma, sigma, fisher = plugin_matrices(path, model, theta_hat, config)
    try:
        ci, avar, u_stat, negative = confidence_intervals(
            theta_hat, gamma, sigma, path.n, alpha=alpha, theta0=theta0
        )
    except SingularGamma:
        ci, avar, u_stat, negative = None, None, None, []

    taper = None
    if config.variant is not Variant.GQLF:
        taper = check_taper_schedule(path.n, config.lam, kappa=kappa, T=path.T)

    return EstimationResult(
        theta_hat=theta_hat,
        objective_value=float(value),
        config=config,
        gamma_hat=gamma,
        sigma_hat=sigma,
        fisher_hat=fisher,
        avar=avar,
        ci=ci,
        alpha=alpha,
        converged=bool(converged),
        iterations=iterations,
        projected_grad_norm=pg_norm,
        boundary_active=boundary,
        used_fallback=used_fallback,
        negative_variance=negative,
        u_stat=u_stat,
        taper_diagnostic=taper,
    )
