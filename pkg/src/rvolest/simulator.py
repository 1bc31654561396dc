"""Path generation: Euler-Maruyama diffusion plus compound-Poisson jumps and
Bernoulli spike noise.

A scenario is simulated on a refined grid of n*substeps Euler steps and then
subsampled at the n+1 observation times.  Jumps arrive by a Poisson process
with the configured per-unit-time intensity; each jump lands on the first
refined gridpoint at or after its event time.  Spikes perturb individual
observations: Y_{t_j} = Y*_{t_j} + p_j C_j with p_j ~ Bernoulli(prob) and
C_j ~ N(0, sigma2), independently over j = 0..n (a spike therefore touches
the two increments adjacent to t_j).

Randomness comes from three independent, replication-addressable streams
(Brownian / Jumps / Spikes) derived from counter-based Philox generators, so
replications can run in any order on any number of workers and still
reproduce bit-identically.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .likelihood import ObservationPath
from .model import make_builtin


class Lane(enum.Enum):
    BROWNIAN = 0
    JUMPS = 1
    SPIKES = 2


def rng_stream(seed: int, replication: int, lane: Lane) -> np.random.Generator:
    """Independent deterministic generator for (seed, replication, lane)."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(replication, lane.value))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class JumpSpec:
    """Compound-Poisson jump component: CP(intensity, size_law), scaled by scale."""

    intensity: float               # expected events per unit time
    size_law: str = "normal"       # "normal" (mean, sigma2) or "gamma" (shape, rate)
    mean: float = 0.0
    sigma2: float = 3.0
    shape: float = 1.0
    rate: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.intensity < 0:
            raise ValueError("jump intensity must be >= 0")
        if self.size_law not in ("normal", "gamma"):
            raise ValueError(f"unknown size_law {self.size_law!r}")

    def draw_sizes(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if self.size_law == "normal":
            sizes = rng.normal(self.mean, np.sqrt(self.sigma2), size=count)
        else:
            sizes = rng.gamma(self.shape, 1.0 / self.rate, size=count)
        return self.scale * sizes


@dataclass(frozen=True)
class SpikeSpec:
    """Additive N(0, sigma2) contamination at each observation w.p. prob."""

    prob: float
    sigma2: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError("spike prob must lie in [0, 1]")
        if self.sigma2 < 0:
            raise ValueError("spike sigma2 must be >= 0")


class CovariateDesign(enum.Enum):
    TRIG_DETERMINISTIC = "trig-deterministic"   # (cos 2 pi t, sin 2 pi t, cos 4 pi t)
    SELF_RESPONSE = "self-response"             # covariate = the response itself


class DriftKind(enum.Enum):
    ZERO = "zero"
    RESPONSE = "response"   # mu(y) = y


@dataclass(frozen=True)
class DgpModel:
    """Data-generating coefficients: builtin diffusion family at theta0 + drift."""

    name: str
    theta0: tuple
    drift: DriftKind = DriftKind.ZERO

    def theta0_array(self) -> np.ndarray:
        return np.asarray(self.theta0, dtype=float)


@dataclass(frozen=True)
class Scenario:
    model: DgpModel
    covariate: CovariateDesign
    n: int
    T: float = 1.0
    jump: Optional[JumpSpec] = None
    spike: Optional[SpikeSpec] = None
    substeps: int = 10
    seed: int = 0
    y0: float = 0.0

    def __post_init__(self):
        if self.n < 1 or self.T <= 0 or self.substeps < 1:
            raise ValueError("need n >= 1, T > 0, substeps >= 1")


@dataclass(frozen=True)
class PathBundle:
    clean: ObservationPath       # no jumps, no spikes
    jumped: ObservationPath      # jumps, no spikes
    observed: ObservationPath    # full contamination
    jump_times: np.ndarray
    spike_indices: np.ndarray    # observation indices j with p_j = 1


def trig_covariates(times: np.ndarray) -> np.ndarray:
    """The deterministic regression covariate (cos 2 pi t, sin 2 pi t, cos 4 pi t)."""
    two_pi_t = 2.0 * np.pi * times
    return np.column_stack([np.cos(two_pi_t), np.sin(two_pi_t), np.cos(4.0 * np.pi * times)])


def _jump_deltas(scenario: Scenario, rng: np.random.Generator, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-refined-step jump amounts (length m) and the event times."""
    deltas = np.zeros(m)
    jump = scenario.jump
    if jump is None or jump.intensity == 0.0 or jump.scale == 0.0:
        return deltas, np.empty(0)
    count = rng.poisson(jump.intensity * scenario.T)
    times = np.sort(rng.uniform(0.0, scenario.T, size=count))
    sizes = jump.draw_sizes(rng, count)
    if count:
        fine_h = scenario.T / m
        # jump lands on the first refined gridpoint >= event time
        idx = np.minimum(np.ceil(times / fine_h - 1e-12).astype(int), m) - 1
        np.add.at(deltas, np.maximum(idx, 0), sizes)
    return deltas, times


def simulate(scenario: Scenario, replication: int = 0) -> PathBundle:
    """Generate (clean, jumped, observed) paths sharing one Brownian draw."""
    n, sub, T = scenario.n, scenario.substeps, scenario.T
    m = n * sub
    fine_h = T / m
    fine_times = np.arange(m + 1) * fine_h
    obs_times = np.arange(n + 1) * (T / n)

    rng_w = rng_stream(scenario.seed, replication, Lane.BROWNIAN)
    rng_j = rng_stream(scenario.seed, replication, Lane.JUMPS)
    rng_s = rng_stream(scenario.seed, replication, Lane.SPIKES)

    dw = rng_w.normal(0.0, np.sqrt(fine_h), size=m)
    jump_deltas, jump_times = _jump_deltas(scenario, rng_j, m)

    model = make_builtin(scenario.model.name)
    theta0 = scenario.model.theta0_array()

    if scenario.covariate is CovariateDesign.TRIG_DETERMINISTIC:
        # sigma depends only on time: increments are independent, the jump
        # component is purely additive.
        x_fine = trig_covariates(fine_times[:-1])
        sigma = np.sqrt(model.s_values(x_fine, theta0))
        if scenario.model.drift is not DriftKind.ZERO:
            raise ValueError("deterministic-covariate designs use zero drift")
        clean_fine = scenario.y0 + np.concatenate([[0.0], np.cumsum(sigma * dw)])
        jumped_fine = clean_fine + np.concatenate([[0.0], np.cumsum(jump_deltas)])
        covariates = trig_covariates(obs_times)
        clean_y = clean_fine[::sub]
        jumped_y = jumped_fine[::sub]
        clean_cov = jumped_cov = covariates
    elif scenario.covariate is CovariateDesign.SELF_RESPONSE:
        clean_fine = np.empty(m + 1)
        jumped_fine = np.empty(m + 1)
        clean_fine[0] = jumped_fine[0] = scenario.y0
        s_point = model.S
        drift_on = scenario.model.drift is DriftKind.RESPONSE
        yc = yj = scenario.y0
        for i in range(m):
            mu_c = yc if drift_on else 0.0
            mu_j = yj if drift_on else 0.0
            yc = yc + mu_c * fine_h + np.sqrt(s_point(yc, theta0)) * dw[i]
            yj = yj + mu_j * fine_h + np.sqrt(s_point(yj, theta0)) * dw[i] + jump_deltas[i]
            clean_fine[i + 1] = yc
            jumped_fine[i + 1] = yj
        clean_y = clean_fine[::sub]
        jumped_y = jumped_fine[::sub]
        clean_cov = clean_y
        jumped_cov = jumped_y
    else:  # pragma: no cover
        raise ValueError(f"unknown covariate design {scenario.covariate}")

    # spike contamination at observation times (drawn for all j to keep the
    # stream layout independent of the Bernoulli outcomes)
    if scenario.spike is not None and scenario.spike.prob > 0.0:
        flags = rng_s.random(n + 1) < scenario.spike.prob
        values = rng_s.normal(0.0, np.sqrt(scenario.spike.sigma2), size=n + 1)
        spikes = np.where(flags, values, 0.0)
        spike_indices = np.flatnonzero(flags)
    else:
        spikes = np.zeros(n + 1)
        spike_indices = np.empty(0, dtype=int)

    observed_y = jumped_y + spikes
    observed_cov = observed_y if scenario.covariate is CovariateDesign.SELF_RESPONSE else jumped_cov

    def _path(cov, y):
        return ObservationPath(n=n, T=T, times=obs_times, covariates=cov, responses=y)

    return PathBundle(
        clean=_path(clean_cov, clean_y),
        jumped=_path(jumped_cov, jumped_y),
        observed=_path(observed_cov, observed_y),
        jump_times=jump_times,
        spike_indices=spike_indices,
    )


# ---------------------------------------------------------------------------
# Named presets for the shipped experiment designs
# ---------------------------------------------------------------------------

PRESET_NAMES = (
    "sec6-1-clean",
    "sec6-1-spike",
    "sec6-2-jump-normal",
    "sec6-2-jump-gamma",
    "sec6-5-jumpdiff",
)


def get_preset(
    name: str,
    n: int = 5000,
    seed: int = 0,
    spike_prob: float = 0.01,
    spike_sigma2: float = 1.0,
    jump_rate_factor: float = 0.01,
    substeps: int = 10,
) -> Scenario:
    """Build a named scenario.  jump intensity scales as jump_rate_factor * n / T."""
    trig_model = DgpModel(name="exp-linear-3", theta0=(-2.0, 3.0, 0.0))
    if name == "sec6-1-clean":
        return Scenario(model=trig_model, covariate=CovariateDesign.TRIG_DETERMINISTIC,
                        n=n, seed=seed, substeps=substeps)
    if name == "sec6-1-spike":
        return Scenario(model=trig_model, covariate=CovariateDesign.TRIG_DETERMINISTIC,
                        n=n, seed=seed, substeps=substeps,
                        spike=SpikeSpec(prob=spike_prob, sigma2=spike_sigma2))
    if name == "sec6-2-jump-normal":
        return Scenario(model=trig_model, covariate=CovariateDesign.TRIG_DETERMINISTIC,
                        n=n, seed=seed, substeps=substeps,
                        jump=JumpSpec(intensity=jump_rate_factor * n, size_law="normal",
                                      mean=0.0, sigma2=3.0))
    if name == "sec6-2-jump-gamma":
        return Scenario(model=trig_model, covariate=CovariateDesign.TRIG_DETERMINISTIC,
                        n=n, seed=seed, substeps=substeps,
                        jump=JumpSpec(intensity=jump_rate_factor * n, size_law="gamma",
                                      shape=1.0, rate=1.0))
    if name == "sec6-5-jumpdiff":
        return Scenario(
            model=DgpModel(name="rational-diffusion", theta0=(2.0, 3.0),
                           drift=DriftKind.RESPONSE),
            covariate=CovariateDesign.SELF_RESPONSE,
            n=n, seed=seed, substeps=substeps,
            jump=JumpSpec(intensity=jump_rate_factor * n, size_law="normal",
                          mean=0.0, sigma2=3.0),
        )
    raise ValueError(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")


def with_seed(scenario: Scenario, seed: int) -> Scenario:
    return replace(scenario, seed=seed)


# ---------------------------------------------------------------------------
# JSON round-trip (field names mirror the dataclasses)
# ---------------------------------------------------------------------------

def scenario_to_dict(s: Scenario) -> dict:
    out = {
        "model": {"name": s.model.name, "theta0": list(s.model.theta0),
                  "drift": s.model.drift.value},
        "covariate": s.covariate.value,
        "n": s.n,
        "T": s.T,
        "substeps": s.substeps,
        "seed": s.seed,
        "y0": s.y0,
        "jump": None,
        "spike": None,
    }
    if s.jump is not None:
        j = {"intensity": s.jump.intensity, "size_law": s.jump.size_law,
             "scale": s.jump.scale}
        if s.jump.size_law == "normal":
            j.update(mean=s.jump.mean, sigma2=s.jump.sigma2)
        else:
            j.update(shape=s.jump.shape, rate=s.jump.rate)
        out["jump"] = j
    if s.spike is not None:
        out["spike"] = {"prob": s.spike.prob, "sigma2": s.spike.sigma2}
    return out


def scenario_from_dict(data: dict) -> Scenario:
    try:
        model = DgpModel(
            name=data["model"]["name"],
            theta0=tuple(float(v) for v in data["model"]["theta0"]),
            drift=DriftKind(data["model"].get("drift", "zero")),
        )
        jump = None
        if data.get("jump"):
            jump = JumpSpec(**data["jump"])
        spike = None
        if data.get("spike"):
            spike = SpikeSpec(**data["spike"])
        return Scenario(
            model=model,
            covariate=CovariateDesign(data["covariate"]),
            n=int(data["n"]),
            T=float(data.get("T", 1.0)),
            jump=jump,
            spike=spike,
            substeps=int(data.get("substeps", 10)),
            seed=int(data.get("seed", 0)),
            y0=float(data.get("y0", 0.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"invalid scenario config: {exc}") from exc
