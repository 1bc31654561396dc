"""The three quasi-likelihood objectives and their theta-derivatives.

With eps_j = h^{-1/2} (Y_{t_j} - Y_{t_{j-1}}), S_j = S(x_{j-1}, theta),
dd_j = det S_j and phi the d-dimensional standard normal density, the
objectives (additive constants dropped) are

  gqlf          -1/2 sum_j [ log dd_j + eps_j' S_j^{-1} eps_j ]
  density-power  sum_j dd_j^{-lam/2} [ (1/lam) phi(S_j^{-1/2} eps_j)^lam - K_{lam,d} ]
  hoelder        sum_j (1/lam) dd_j^{-lam/(2(lam+1))} phi(S_j^{-1/2} eps_j)^lam

The tapered variants have bounded summands: a single arbitrarily large
increment moves the density-power objective by at most
dd^{-lam/2} (2 pi)^{-d lam/2} / lam, which is what defeats jumps and spikes.
phi(.)^lam is evaluated in log space; underflow for huge increments clamps
the weight to 0, which is the correct limit.

All functions are pure; per-increment terms are reduced with np.sum (fixed
pairwise topology), so results are bit-stable for a given input.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import CholeskyFailure
from .mathcore import LOG_2PI, chol_spd, k_const
from .model import CovariateSource, ModelSpec

DEFAULT_LAMBDA_BAR = 2.0


@dataclass(frozen=True)
class ObservationPath:
    """Equally spaced sample (t_j, X_{t_j}, Y_{t_j}), j = 0..n, with t_j = j T / n."""

    n: int
    T: float
    times: np.ndarray
    covariates: np.ndarray | None
    responses: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).copy()
        responses = np.atleast_1d(np.asarray(self.responses, dtype=float)).copy()
        if responses.ndim == 1:
            responses = responses[:, None]
        if self.n < 1 or self.T <= 0:
            raise ValueError("need n >= 1 and T > 0")
        if times.shape != (self.n + 1,) or responses.shape[0] != self.n + 1:
            raise ValueError("times and responses must have length n+1")
        expected = np.arange(self.n + 1) * (self.T / self.n)
        if np.max(np.abs(times - expected)) > 1e-9 * max(self.T, 1.0):
            raise ValueError("times must equal j*T/n (equally spaced grid)")
        covariates = self.covariates
        if covariates is not None:
            covariates = np.atleast_1d(np.asarray(covariates, dtype=float)).copy()
            if covariates.ndim == 1:
                covariates = covariates[:, None]
            if covariates.shape[0] != self.n + 1:
                raise ValueError("covariates must have length n+1")
            covariates.setflags(write=False)
        times.setflags(write=False)
        responses.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "responses", responses)

    @classmethod
    def from_arrays(cls, T: float, covariates, responses) -> "ObservationPath":
        responses = np.asarray(responses, dtype=float)
        n = responses.shape[0] - 1
        times = np.arange(n + 1) * (T / n)
        return cls(n=n, T=T, times=times, covariates=covariates, responses=responses)

    @property
    def h(self) -> float:
        return self.T / self.n

    @property
    def d(self) -> int:
        return self.responses.shape[1]


def scaled_increments(path: ObservationPath) -> np.ndarray:
    """eps_j = h^{-1/2} (Y_{t_j} - Y_{t_{j-1}}) as an (n, d) array."""
    return np.diff(path.responses, axis=0) / np.sqrt(path.h)


class Variant(enum.Enum):
    GQLF = "gqlf"
    DENSITY_POWER = "dp"
    HOELDER = "holder"


@dataclass(frozen=True)
class RobustConfig:
    """Estimator variant plus tapering parameter lambda (ignored for GQLF)."""

    variant: Variant
    lam: float = 0.0
    lambda_bar: float = DEFAULT_LAMBDA_BAR

    def __post_init__(self):
        if self.variant is not Variant.GQLF:
            if not (0.0 < self.lam <= self.lambda_bar):
                raise ValueError(
                    f"lambda must lie in (0, {self.lambda_bar}], got {self.lam}"
                )

    @classmethod
    def gqlf(cls) -> "RobustConfig":
        return cls(Variant.GQLF)

    @classmethod
    def density_power(cls, lam: float, lambda_bar: float = DEFAULT_LAMBDA_BAR):
        return cls(Variant.DENSITY_POWER, lam, lambda_bar)

    @classmethod
    def hoelder(cls, lam: float, lambda_bar: float = DEFAULT_LAMBDA_BAR):
        return cls(Variant.HOELDER, lam, lambda_bar)

    @property
    def label(self) -> str:
        if self.variant is Variant.GQLF:
            return "gqlf"
        return f"{self.variant.value}(lambda={self.lam:g})"


def covariate_block(path: ObservationPath, model: ModelSpec) -> np.ndarray:
    """x_{j-1} for j = 1..n, read per the model's covariate convention."""
    if model.covariate_source is CovariateSource.SELF_RESPONSE:
        return path.responses[:-1]
    if path.covariates is None:
        raise ValueError("model expects external covariates but path has none")
    return path.covariates[:-1]


def _check_positive(s: np.ndarray) -> None:
    bad = ~(np.isfinite(s) & (s > 0.0))
    if np.any(bad):
        raise CholeskyFailure(index=int(np.argmax(bad)) + 1)


def _eval_d1(path, model, theta, config, want_grad):
    """Vectorized d = 1 evaluation; returns (value, grad-or-None)."""
    theta = np.asarray(theta, dtype=float)
    x_block = covariate_block(path, model)
    eps = scaled_increments(path)[:, 0]
    s = np.asarray(model.s_values(x_block, theta), dtype=float)
    _check_positive(s)
    q = eps * eps / s
    log_s = np.log(s)

    grad = None
    if config.variant is Variant.GQLF:
        value = -0.5 * float(np.sum(log_s + q))
        if want_grad:
            t = model.ds_values(x_block, theta) / s[:, None]
            grad = -0.5 * ((1.0 - q) @ t)
        return value, grad

    lam = config.lam
    w = np.exp(-0.5 * lam * (LOG_2PI + q))  # phi(S^{-1/2} eps)^lam, d = 1
    if config.variant is Variant.DENSITY_POWER:
        kconst = k_const(lam, 1)
        det_taper = np.exp(-0.5 * lam * log_s)
        value = float(np.sum(det_taper * (w / lam - kconst)))
        if want_grad:
            t = model.ds_values(x_block, theta) / s[:, None]
            grad = 0.5 * ((det_taper * (w * (q - 1.0) + lam * kconst)) @ t)
        return value, grad

    # Hoelder-based
    det_taper = np.exp(-0.5 * lam / (lam + 1.0) * log_s)
    value = float(np.sum(det_taper * w)) / lam
    if want_grad:
        t = model.ds_values(x_block, theta) / s[:, None]
        grad = 0.5 * ((det_taper * w * (q - 1.0 / (lam + 1.0))) @ t)
    return value, grad


def _eval_general(path, model, theta, config, want_grad):
    """Generic d >= 1 matrix path; reference implementation for the d=1 fast path."""
    theta = np.asarray(theta, dtype=float)
    x_block = covariate_block(path, model)
    eps = scaled_increments(path)
    n, d, p = path.n, model.d, model.p
    s_all = model.s_values(x_block, theta).reshape(n, d, d)
    ds_all = model.ds_values(x_block, theta).reshape(n, p, d, d) if want_grad else None

    lam = config.lam
    if config.variant is not Variant.GQLF:
        kconst = k_const(lam, d)

    values = np.empty(n)
    grads = np.empty((n, p)) if want_grad else None
    for j in range(n):
        lower = chol_spd(s_all[j], index=j + 1)
        log_det = 2.0 * float(np.log(np.diagonal(lower)).sum())
        sinv_eps = np.linalg.solve(
            lower.T, np.linalg.solve(lower, eps[j])
        )
        quad = float(eps[j] @ sinv_eps)

        if want_grad:
            t_vec = np.array(
                [
                    np.trace(np.linalg.solve(lower.T, np.linalg.solve(lower, ds_all[j, k])))
                    for k in range(p)
                ]
            )
            q_vec = np.array([sinv_eps @ ds_all[j, k] @ sinv_eps for k in range(p)])

        if config.variant is Variant.GQLF:
            values[j] = -0.5 * (log_det + quad)
            if want_grad:
                grads[j] = -0.5 * (t_vec - q_vec)
        else:
            w = np.exp(-0.5 * lam * (d * LOG_2PI + quad))
            if config.variant is Variant.DENSITY_POWER:
                taper = np.exp(-0.5 * lam * log_det)
                values[j] = taper * (w / lam - kconst)
                if want_grad:
                    grads[j] = 0.5 * taper * (w * (q_vec - t_vec) + lam * kconst * t_vec)
            else:
                taper = np.exp(-0.5 * lam / (lam + 1.0) * log_det)
                values[j] = taper * w / lam
                if want_grad:
                    grads[j] = 0.5 * taper * w * (q_vec - t_vec / (lam + 1.0))
    total = float(np.sum(values))
    grad = np.sum(grads, axis=0) if want_grad else None
    return total, grad


def _evaluate(path, model, theta, config, want_grad=False):
    if model.d == 1:
        return _eval_d1(path, model, theta, config, want_grad)
    return _eval_general(path, model, theta, config, want_grad)


def gqlf(path: ObservationPath, model: ModelSpec, theta) -> float:
    """Conventional Gaussian quasi-log-likelihood (constant dropped)."""
    return _evaluate(path, model, theta, RobustConfig.gqlf())[0]


def dp_gqlf(path: ObservationPath, model: ModelSpec, theta, lam: float) -> float:
    """Density-power tapered quasi-likelihood."""
    return _evaluate(path, model, theta, RobustConfig.density_power(lam))[0]


def hoelder_gqlf(path: ObservationPath, model: ModelSpec, theta, lam: float) -> float:
    """Hoelder-normalized quasi-likelihood."""
    return _evaluate(path, model, theta, RobustConfig.hoelder(lam))[0]


def objective(path: ObservationPath, model: ModelSpec, theta, config: RobustConfig) -> float:
    """Dispatch to the configured variant."""
    return _evaluate(path, model, theta, config)[0]


def value_and_grad(path, model, theta, config) -> tuple[float, np.ndarray]:
    """Objective and its analytic gradient in one pass (shared S/dS evaluation)."""
    if model.dS is None and model.ds_path is None:
        value = _evaluate(path, model, theta, config)[0]
        return value, _fd_gradient(path, model, theta, config)
    return _evaluate(path, model, theta, config, want_grad=True)


def _fd_gradient(path, model, theta, config) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    for k in range(theta.shape[0]):
        step = 1e-6 * (1.0 + abs(theta[k]))
        up, down = theta.copy(), theta.copy()
        up[k] += step
        down[k] -= step
        grad[k] = (
            _evaluate(path, model, up, config)[0]
            - _evaluate(path, model, down, config)[0]
        ) / (2.0 * step)
    return grad


def grad_objective(path, model, theta, config) -> np.ndarray:
    """Gradient of the objective; analytic from dS when available, else central FD."""
    return value_and_grad(path, model, theta, config)[1]


def hess_objective(path, model, theta, config) -> np.ndarray:
    """Symmetrized central finite-difference Hessian of the analytic gradient."""
    theta = np.asarray(theta, dtype=float)
    p = theta.shape[0]
    hess = np.empty((p, p))
    for k in range(p):
        step = 1e-4 * (1.0 + abs(theta[k]))
        up, down = theta.copy(), theta.copy()
        up[k] += step
        down[k] -= step
        g_up = grad_objective(path, model, up, config)
        g_down = grad_objective(path, model, down, config)
        hess[k] = (g_up - g_down) / (2.0 * step)
    return 0.5 * (hess + hess.T)
