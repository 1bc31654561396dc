"""Closed-form Gaussian constants, density-power moments, and small SPD utilities.

Everything here is a pure function of its arguments.  The moment identities
are the workhorses behind the robust objectives and their asymptotic
covariance matrices: with ``phi`` the d-dimensional standard normal density,

    integral phi(z)^(lam+1) dz                    = (lam+1) * k_const(lam, d)
    integral phi(z)^(lam+1) A[z (x) z] dz         = k_const(lam, d) * tr(A)
    integral phi(z)^(lam+1) A1[z(x)z] A2[z(x)z] dz
        = k_const(lam, d)/(lam+1) * (tr(A1) tr(A2) + 2 tr(A1 A2))

The shipped library uses only these closed forms; numerical quadrature
oracles live in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import CholeskyFailure

LOG_2PI = float(np.log(2.0 * np.pi))

# Relative pivot tolerance for accepting a Cholesky factorization: the
# smallest pivot must exceed 1e-12 times the largest diagonal entry.
_PIVOT_RTOL = 1e-12


def chol_spd(a: np.ndarray, index: int | None = None) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises CholeskyFailure when the factorization breaks down or the smallest
    pivot is below the relative tolerance (near-singular S for extreme theta).
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise CholeskyFailure("matrix has non-finite entries", index=index)
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise CholeskyFailure(index=index) from None
    pivots = np.diagonal(lower) ** 2
    if pivots.min() <= _PIVOT_RTOL * max(a.diagonal().max(), 0.0):
        raise CholeskyFailure("matrix numerically singular", index=index)
    return lower


def spd_logdet(a: np.ndarray) -> float:
    """log det of an SPD matrix via Cholesky."""
    lower = chol_spd(a)
    return float(2.0 * np.log(np.diagonal(lower)).sum())


def spd_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a @ x = b for SPD a."""
    lower = chol_spd(a)
    y = np.linalg.solve(lower, b)
    return np.linalg.solve(lower.T, y)


@dataclass(frozen=True)
class SpdMatrix:
    """A validated symmetric positive definite matrix.

    Symmetry is enforced to 1e-12 relative on construction and the Cholesky
    factorization must succeed; the factor is cached for reuse.
    """

    entries: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.entries, dtype=float))
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"not square: shape {a.shape}")
        scale = max(np.abs(a).max(), 1.0)
        if np.abs(a - a.T).max() > 1e-12 * scale:
            raise ValueError("matrix not symmetric to 1e-12 relative")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)
        self.chol  # noqa: B018 -- validates positive definiteness eagerly

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def chol(self) -> np.ndarray:
        return chol_spd(self.entries)

    @cached_property
    def logdet(self) -> float:
        return float(2.0 * np.log(np.diagonal(self.chol)).sum())

    @property
    def det(self) -> float:
        return float(np.exp(self.logdet))

    def solve(self, b: np.ndarray) -> np.ndarray:
        y = np.linalg.solve(self.chol, b)
        return np.linalg.solve(self.chol.T, y)

    def inv(self) -> np.ndarray:
        return self.solve(np.eye(self.dim))

    def whiten(self, x: np.ndarray) -> np.ndarray:
        """L^{-1} x, so that |whiten(x)|^2 = x' S^{-1} x."""
        return np.linalg.solve(self.chol, x)


@dataclass(frozen=True)
class GaussKernel:
    """A d-dimensional Gaussian density N(mean, cov)."""

    mean: np.ndarray
    cov: SpdMatrix

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if mean.shape != (self.cov.dim,):
            raise ValueError("mean/cov dimension mismatch")
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)

    @property
    def dim(self) -> int:
        return self.cov.dim

    def log_density(self, x: np.ndarray) -> float:
        z = self.cov.whiten(np.asarray(x, dtype=float) - self.mean)
        return float(-0.5 * (self.dim * LOG_2PI + self.cov.logdet + z @ z))

    def density(self, x: np.ndarray) -> float:
        return float(np.exp(self.log_density(x)))


def _as_symmetric(a) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"not square: shape {a.shape}")
    if np.abs(a - a.T).max() > 1e-8 * max(np.abs(a).max(), 1.0):
        raise ValueError("matrix not symmetric")
    return 0.5 * (a + a.T)


def k_const(lam: float, d: int) -> float:
    """The normal-power normalization (2 pi)^(-d lam/2) / (lam+1)^(1+d/2).

    Defined for lam >= 0, d >= 1; equals 1 at lam = 0.
    """
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    # exp/log form keeps full precision for the very small lam used in
    # taper-limit checks.
    return float(np.exp(-0.5 * d * lam * LOG_2PI - (1.0 + 0.5 * d) * np.log1p(lam)))


def phi_power_integral(a: float, cov) -> float:
    """integral of phi(z; 0, cov)^a over R^d, equal to a^(-d/2) det(2 pi cov)^((1-a)/2).

    ``cov`` may be an SpdMatrix, a raw SPD array, or a positive scalar (d=1).
    """
    if a <= 0:
        raise ValueError(f"power a must be > 0, got {a}")
    if isinstance(cov, SpdMatrix):
        d, logdet = cov.dim, cov.logdet
    else:
        arr = np.asarray(cov, dtype=float)
        if arr.ndim == 0:
            # d=1 fast path: scalar variance
            if not arr > 0:
                raise CholeskyFailure("scalar variance not positive")
            d, logdet = 1, float(np.log(arr))
        else:
            d, logdet = arr.shape[0], spd_logdet(arr)
    log_val = -0.5 * d * np.log(a) + 0.5 * (1.0 - a) * (d * LOG_2PI + logdet)
    return float(np.exp(log_val))


def gauss_quadratic_moment(lam: float, a) -> float:
    """integral phi(z)^(lam+1) A[z (x) z] dz = k_const(lam, d) * trace(A)."""
    a = _as_symmetric(a)
    return k_const(lam, a.shape[0]) * float(np.trace(a))


def gauss_biquadratic_moment(lam: float, a1, a2) -> float:
    """integral phi^(lam+1) A1[z(x)z] A2[z(x)z] dz
    = k_const/(lam+1) * (tr(A1) tr(A2) + 2 tr(A1 A2)).
    """
    a1 = _as_symmetric(a1)
    a2 = _as_symmetric(a2)
    if a1.shape != a2.shape:
        raise ValueError("A1, A2 must have the same dimension")
    d = a1.shape[0]
    mixed = float(np.trace(a1) * np.trace(a2) + 2.0 * np.trace(a1 @ a2))
    return k_const(lam, d) / (lam + 1.0) * mixed


def eps_prime(lam: float, d: int) -> float:
    """Taper excess-variance coefficient of the density-power score.

    eps'(lam) = (1/(2 lam + 1) + 2 lam - 1) K_{2 lam, d} - lam^2 K_{lam, d}^2,
    the t(x)t coefficient in the score variance beyond the Fisher part.
    Vanishes as lam -> 0.
    """
    if lam <= 0:
        raise ValueError(f"lam must be > 0, got {lam}")
    k2 = k_const(2.0 * lam, d)
    k1 = k_const(lam, d)
    return (1.0 / (2.0 * lam + 1.0) + 2.0 * lam - 1.0) * k2 - lam**2 * k1**2


def eps_dprime(lam: float, d: int) -> float:
    """Taper excess-variance coefficient of the Hoelder-normalized score.

    eps''(lam) = (1/4) (1/(2 lam + 1) - 1/(lam + 1)^2) K_{2 lam, d}.
    Vanishes as lam -> 0.
    """
    if lam <= 0:
        raise ValueError(f"lam must be > 0, got {lam}")
    k2 = k_const(2.0 * lam, d)
    return 0.25 * (1.0 / (2.0 * lam + 1.0) - 1.0 / (lam + 1.0) ** 2) * k2
