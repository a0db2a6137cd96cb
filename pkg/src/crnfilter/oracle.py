"""Exact filtering on a truncated state space.

The jump process restricted to a box of copy numbers is a finite CTMC.  Mass
that would leave the box is killed, so propagated vectors are
sub-stochastic and the lost mass bounds the truncation error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.stats import poisson

from .network import ReactionNetwork
from .observation import ObservationModel, ObservationSequence, log_weight
from .scaling import ScalingSpec, analyze_timescales

__all__ = [
    "ExactFilterResult",
    "GeneratorMatrix",
    "TruncatedStateSpace",
    "bayes_update",
    "build_generator",
    "exact_filter",
    "initial_distribution",
    "propagate",
]

MAX_STATES = 10**6


class StateSpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class TruncatedStateSpace:
    bounds: tuple[int, ...]

    def __post_init__(self):
        if any(b < 0 for b in self.bounds):
            raise ValueError("bounds must be non-negative")
        if self.size > MAX_STATES:
            raise StateSpaceTooLarge(f"{self.size} states exceeds cap {MAX_STATES}")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(b + 1 for b in self.bounds)

    @property
    def size(self) -> int:
        return math.prod(b + 1 for b in self.bounds)

    @property
    def states(self) -> np.ndarray:
        """(size, n) raw states, ordinal order (last species fastest)."""
        grids = np.indices(self.shape).reshape(len(self.bounds), -1).T
        return grids.astype(np.int64)

    def index(self, states) -> np.ndarray:
        s = np.atleast_2d(np.asarray(states, dtype=np.int64))
        return np.ravel_multi_index(tuple(s.T), self.shape)

    def contains(self, states) -> np.ndarray:
        s = np.atleast_2d(states)
        return np.all((s >= 0) & (s <= np.asarray(self.bounds)), axis=1)


@dataclass
class GeneratorMatrix:
    Q: sp.csr_matrix
    space: TruncatedStateSpace

    @property
    def leak_rates(self) -> np.ndarray:
        return -np.asarray(self.Q.sum(axis=1)).ravel()


def _falling(x: np.ndarray, v: int) -> np.ndarray:
    out = np.ones(len(x))
    for ell in range(v):
        out *= x - ell
    return np.where(x >= v, out, 0.0)


def build_generator(net: ReactionNetwork, spec: ScalingSpec | None,
                    space: TruncatedStateSpace) -> GeneratorMatrix:
    if len(space.bounds) != net.n_species:
        raise ValueError("state-space dimension differs from species count")
    time_factor = 1.0
    if spec is not None:
        time_factor = spec.N ** float(analyze_timescales(net, spec).gamma1)
    states = space.states
    n_states = len(states)
    rows, cols, vals = [], [], []
    diag = np.zeros(n_states)
    zeta = net.change_matrix()
    for j, r in enumerate(net.reactions):
        rate = np.full(n_states, r.rate_constant * time_factor)
        for i, v in enumerate(r.substrate):
            if v:
                rate *= _falling(states[:, i].astype(float), v)
        if not np.any(zeta[j]):
            continue  # self-loop: no change of state
        target = states + zeta[j]
        inside = space.contains(target)
        live = rate > 0
        ok = live & inside
        src = np.flatnonzero(ok)
        rows.append(src)
        cols.append(space.index(target[ok]) if src.size else np.empty(0, dtype=np.int64))
        vals.append(rate[ok])
        diag -= np.where(live, rate, 0.0)  # includes the killed (leaking) part
    rows.append(np.arange(n_states))
    cols.append(np.arange(n_states))
    vals.append(diag)
    Q = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_states, n_states),
    )
    Q.sum_duplicates()
    return GeneratorMatrix(Q, space)


def propagate(Q, p, dt: float, tol: float = 1e-12) -> np.ndarray:
    """Row vector ``p`` times ``exp(Q dt)`` by uniformization."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if isinstance(Q, GeneratorMatrix):
        Q = Q.Q
    p = np.asarray(p, dtype=float).copy()
    Q = sp.csr_matrix(Q)
    rate = float(np.max(np.abs(Q.diagonal()))) if Q.shape[0] else 0.0
    if dt == 0 or rate == 0 or Q.nnz == 0:
        return p
    QT = Q.T.tocsr()
    # keep each Poisson window moderate so e^{-rate tau} stays well scaled
    chunks = max(1, math.ceil(rate * dt / 25.0))
    tau = dt / chunks
    lam = rate * tau
    kmax = int(poisson.ppf(1.0 - tol / chunks, lam)) + 1
    weights = poisson.pmf(np.arange(kmax + 1), lam)
    for _ in range(chunks):
        term = p
        acc = weights[0] * term
        for k in range(1, kmax + 1):
            term = term + (QT @ term) / rate
            acc = acc + weights[k] * term
        p = acc
    return p


def bayes_update(p, model: ObservationModel, y, states) -> np.ndarray:
    """Posterior over ``states`` (scaled) after observing ``y``."""
    p = np.asarray(p, dtype=float)
    lw = log_weight(model, states, y)
    post = p * np.exp(lw - np.max(lw))
    total = math.fsum(post.tolist())
    if not total > 0:
        raise ValueError("zero posterior mass: observation impossible under the prior")
    return post / total


def initial_distribution(net: ReactionNetwork, space: TruncatedStateSpace) -> np.ndarray:
    """Initial law on the box; mass outside the box is dropped."""
    states = space.states
    p = np.ones(len(states))
    for s in net.species:
        x = states[:, s.id]
        law = s.initial
        if law.kind == "point":
            p *= x == law.value
        elif law.kind == "bernoulli":
            p *= np.where(x == 1, law.value, np.where(x == 0, 1 - law.value, 0.0))
        elif law.kind == "poisson":
            p *= poisson.pmf(x, law.value)
        else:
            p *= x == 1 - states[:, net.index(law.ref)]
    return p


@dataclass
class ExactFilterResult:
    times: np.ndarray
    names: list[str]
    mean: np.ndarray  # (T, k)
    sd: np.ndarray
    leak: np.ndarray  # prior mass lost to truncation at each step
    posterior: np.ndarray


def exact_filter(
    net: ReactionNetwork,
    spec: ScalingSpec | None,
    space: TruncatedStateSpace,
    model: ObservationModel | None,
    obs: ObservationSequence,
    p0,
    functionals,
    factor=None,
) -> ExactFilterResult:
    """Predict with the truncated CTMC, correct with g.

    ``model=None`` skips the correction (prior marginals).  ``factor`` maps raw
    states to the scaled coordinates the functionals and channels expect.
    """
    gen = build_generator(net, spec, space)
    states = space.states.astype(float)
    if factor is not None:
        states = states * np.asarray(factor)
    values = np.stack([np.asarray(f(states), dtype=float) for f in functionals], axis=1)
    p = np.asarray(p0, dtype=float) / math.fsum(np.asarray(p0, dtype=float).tolist())
    means, sds, leaks = [], [], []
    t_prev = 0.0
    for t, y in zip(obs.times, obs.values):
        prior = propagate(gen, p, float(t - t_prev))
        mass = math.fsum(prior.tolist())
        leaks.append(1.0 - mass)
        if model is None:
            p = prior / mass
        else:
            p = bayes_update(prior, model, y, states)
        m = p @ values
        means.append(m)
        sds.append(np.sqrt(np.maximum(p @ (values - m) ** 2, 0.0)))
        t_prev = t
    k = values.shape[1]
    return ExactFilterResult(
        np.asarray(obs.times, dtype=float),
        [f.name for f in functionals],
        np.array(means).reshape(-1, k),
        np.array(sds).reshape(-1, k),
        np.array(leaks),
        p,
    )
