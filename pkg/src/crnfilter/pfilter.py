"""Bootstrap particle filter with multinomial resampling.

The filter only ever calls ``kernel(states, dt, rng)``; exact and reduced
kernels are interchangeable.  Weights live in log space.  Sums over particles
use ``math.fsum`` so estimates do not depend on particle order.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numba as nb
import numpy as np

from .observation import ObservationModel, ObservationSequence, log_weight
from .rng import STREAMS, RngStream

__all__ = [
    "DegenerateEnsembleError",
    "FilterEstimate",
    "FilterRun",
    "Functional",
    "ParticleEnsemble",
    "estimate",
    "multinomial_resample",
    "normalize",
    "pf_step",
    "run_filter",
    "species_functionals",
]

log = logging.getLogger(__name__)

Kernel = Callable[[np.ndarray, float, RngStream], np.ndarray]


class DegenerateEnsembleError(RuntimeError):
    pass


def _sum(v: np.ndarray) -> float:
    return math.fsum(np.ravel(v).tolist())


@dataclass
class ParticleEnsemble:
    particles: np.ndarray  # (M, n)
    log_weights: np.ndarray  # (M,)
    step_index: int = 0
    equal_weights: bool = False  # set after resampling: weights are exactly 1/M

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        if len(self.particles) < 1 or len(self.log_weights) != len(self.particles):
            raise ValueError("ensemble needs M >= 1 particles with one weight each")

    @classmethod
    def uniform(cls, particles, step_index: int = 0) -> "ParticleEnsemble":
        m = len(particles)
        return cls(particles, np.full(m, -math.log(m)), step_index, True)

    @property
    def M(self) -> int:
        return len(self.particles)

    @property
    def weights(self) -> np.ndarray:
        if self.equal_weights:
            return np.full(self.M, 1.0 / self.M)
        return np.exp(self.log_weights)

    def ess(self) -> float:
        w = self.weights
        return 1.0 / _sum(w * w)


def normalize(ens: ParticleEnsemble) -> ParticleEnsemble:
    lw = ens.log_weights
    top = np.max(lw)
    if not np.isfinite(top):
        raise DegenerateEnsembleError(
            f"degenerate ensemble at step {ens.step_index}: max log-weight {top}, "
            f"{int(np.sum(np.isfinite(lw)))} finite of {len(lw)}"
        )
    total = _sum(np.exp(lw - top))
    return ParticleEnsemble(ens.particles, lw - (top + math.log(total)), ens.step_index)


@dataclass(frozen=True)
class Functional:
    """A test function phi(state); ``bound`` marks it as (truncated to) bounded."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    bound: float | None = None

    def __call__(self, states: np.ndarray) -> np.ndarray:
        v = np.asarray(self.fn(states), dtype=float)
        if self.bound is not None:
            v = np.clip(v, -self.bound, self.bound)
        return v


def species_functionals(names, factor=None, bound: float | None = None) -> list[Functional]:
    """One functional per species; ``factor`` multiplies into output units."""
    out = []
    for i, name in enumerate(names):
        f = 1.0 if factor is None else float(factor[i])
        out.append(Functional(name, lambda s, i=i, f=f: s[:, i] * f, bound))
    return out


def estimate(ens: ParticleEnsemble, phi) -> float:
    v = np.asarray(phi(ens.particles), dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("functional returned non-finite values")
    if getattr(phi, "bound", 0) is None:
        log.debug("functional %s is unbounded", getattr(phi, "name", phi))
    return _sum(ens.weights * v)


def _moments(ens: ParticleEnsemble, phi) -> tuple[float, float]:
    v = np.asarray(phi(ens.particles), dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("functional returned non-finite values")
    w = ens.weights
    mean = _sum(w * v)
    var = max(_sum(w * (v - mean) ** 2), 0.0)
    return mean, math.sqrt(var)


@dataclass
class FilterEstimate:
    time: float
    names: list[str]
    mean: np.ndarray
    sd: np.ndarray
    ess: float
    step_wall: float = float("nan")  # seconds spent in pf_step


@nb.njit(cache=True)
def _inverse_cdf(cdf, u):
    m = u.shape[0]
    last = cdf.shape[0] - 1
    idx = np.empty(m, dtype=np.int64)
    j = 0
    for i in range(m):
        while j < last and cdf[j] < u[i]:
            j += 1
        idx[i] = j
    return idx


def multinomial_resample(ens: ParticleEnsemble, rng: np.random.Generator) -> ParticleEnsemble:
    """M i.i.d. draws from the weighted ensemble via sorted uniforms."""
    m = ens.M
    spacings = rng.standard_exponential(m + 1)
    u = np.cumsum(spacings[:m]) / spacings.sum()
    cdf = np.cumsum(ens.weights)
    idx = _inverse_cdf(cdf, u)
    return ParticleEnsemble.uniform(ens.particles[idx], ens.step_index)


def pf_step(
    ens: ParticleEnsemble,
    kernel: Kernel,
    model: ObservationModel,
    y,
    dt: float,
    prop_rng: RngStream,
    resample_rng: np.random.Generator,
    functionals,
    t: float = float("nan"),
    resample: str = "always",
    ess_fraction: float = 0.5,
) -> tuple[ParticleEnsemble, FilterEstimate]:
    """Propagate, reweight, estimate, resample."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if resample not in ("always", "ess", "never"):
        raise ValueError(f"unknown resample policy {resample!r}")
    particles = kernel(ens.particles, dt, prop_rng)
    lw = ens.log_weights + log_weight(model, particles, np.asarray(y, dtype=float))
    new = normalize(ParticleEnsemble(particles, lw, ens.step_index + 1))
    means, sds = zip(*(_moments(new, f) for f in functionals)) if functionals else ((), ())
    ess = min(max(new.ess(), 1.0), float(new.M))
    est = FilterEstimate(t, [f.name for f in functionals], np.array(means), np.array(sds), ess)
    if resample == "always" or (resample == "ess" and ess < ess_fraction * new.M):
        new = multinomial_resample(new, resample_rng)
    return new, est


@dataclass
class FilterRun:
    estimates: list[FilterEstimate]
    kernel_kind: str
    M: int
    final: ParticleEnsemble | None = field(default=None, repr=False)

    @property
    def times(self) -> np.ndarray:
        return np.array([e.time for e in self.estimates])

    def means(self) -> np.ndarray:
        return np.array([e.mean for e in self.estimates])

    def sds(self) -> np.ndarray:
        return np.array([e.sd for e in self.estimates])

    def step_walls(self) -> np.ndarray:
        return np.array([e.step_wall for e in self.estimates])

    def column(self, name: str) -> int:
        return self.estimates[0].names.index(name)


def run_filter(
    kernel: Kernel,
    model: ObservationModel,
    x0_sampler: Callable[[np.random.Generator, int], np.ndarray],
    obs: ObservationSequence,
    M: int,
    seed: int,
    functionals,
    propagation_stream: int | None = None,
    resample: str = "always",
) -> FilterRun:
    """Run the particle filter over every observation in ``obs``.

    Initial particles and resampling draws come from streams shared by every
    kernel; propagation uses a kernel-specific stream unless one is given.
    """
    if len(obs) == 0:
        raise ValueError("no observations to assimilate")
    if M < 1:
        raise ValueError("need at least one particle")
    kind = getattr(kernel, "kind", "full")
    if propagation_stream is None:
        propagation_stream = STREAMS.get(f"propagate_{kind}", STREAMS["propagate_full"])
    init = x0_sampler(RngStream(seed, STREAMS["init"]).generator(), M)
    resample_rng = RngStream(seed, STREAMS["resample"]).generator()
    prop = RngStream(seed, propagation_stream)
    ens = ParticleEnsemble.uniform(init)
    estimates = []
    t_prev = 0.0
    for i, (t, y) in enumerate(zip(obs.times, obs.values)):
        start = time.perf_counter()
        ens, est = pf_step(
            ens, kernel, model, y, float(t - t_prev), prop.substream(i), resample_rng,
            functionals, t=float(t), resample=resample,
        )
        est.step_wall = time.perf_counter() - start
        estimates.append(est)
        t_prev = t
    return FilterRun(estimates, kind, M, ens)
