"""Exact simulation of the scaled jump process (modified next reaction method).

Internally the state is kept as raw copy numbers (exact integers stored in
float64) and rates are ``k_j N^{gamma_1}`` times the raw falling factorial,
which is algebraically the same as ``N^{gamma_1 + rho_j} lambda^N_j`` on the
scaled state.  Inputs and outputs are scaled abundances.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .network import ReactionNetwork
from .rng import RngStream, derive_key, exponential, particle_keys
from .scaling import ScalingSpec, analyze_timescales

__all__ = [
    "ExplosionError",
    "FullKernel",
    "Trajectory",
    "sample_kernel",
    "simulate_full",
    "write_trajectory_csv",
]

DEFAULT_MAX_EVENTS = 10**8


class ExplosionError(RuntimeError):
    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), n_species), scaled
    kind: str  # "pure-jump" | "hybrid"
    n_events: int = 0
    species: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times and states differ in length")
        if len(self.times) and (self.times[0] != 0 or np.any(np.diff(self.times) <= 0)):
            raise ValueError("times must start at 0 and increase strictly")

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def at(self, t: float) -> np.ndarray:
        """State at time ``t`` (right-continuous, last record at or before t)."""
        k = np.searchsorted(self.times, t, side="right") - 1
        return self.states[max(k, 0)]


def write_trajectory_csv(traj: Trajectory, path, species=None, raw_factor=None) -> None:
    """CSV with header ``t,<species...>``; ``raw_factor`` converts to raw units."""
    names = species or traj.species or [f"species{i + 1}" for i in range(traj.states.shape[1])]
    states = traj.states if raw_factor is None else traj.states * raw_factor
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *names])
        for t, x in zip(traj.times, states):
            w.writerow([repr(float(t)), *(repr(float(v)) for v in x)])


@nb.njit(inline="always")
def _raw_propensities(x, sub, rate, a):
    r, n = sub.shape
    for j in range(r):
        v = rate[j]
        for i in range(n):
            s = sub[j, i]
            if s:
                xi = x[i]
                if xi < s:
                    v = 0.0
                    break
                for ell in range(s):
                    v *= xi - ell
        a[j] = v


@nb.njit(cache=True)
def _mnrm(x, sub, delta, rate, t_end, key, max_events, rec_t, rec_x, record):
    """Advance raw state ``x`` in place to ``t_end``.

    Returns (events, status, records); status 1 means the event cap was hit.
    """
    r, n = sub.shape
    a = np.empty(r)
    T = np.zeros(r)
    P = np.empty(r)
    rkey = np.empty(r, dtype=np.uint64)
    cnt = np.zeros(r, dtype=np.int64)
    for j in range(r):
        rkey[j] = derive_key(key, j)
        P[j] = exponential(rkey[j], 0)
    _raw_propensities(x, sub, rate, a)
    cap = rec_t.shape[0]
    nrec = 0
    if record:
        if nrec < cap:
            rec_t[nrec] = 0.0
            rec_x[nrec, :] = x
        nrec += 1
    t = 0.0
    events = 0
    status = 0
    while True:
        best = -1
        dmin = np.inf
        for j in range(r):
            if a[j] > 0.0:
                d = (P[j] - T[j]) / a[j]
                if d < dmin:
                    dmin = d
                    best = j
        if best < 0 or t + dmin > t_end:
            break
        if events >= max_events:
            status = 1
            break
        t += dmin
        for j in range(r):
            T[j] += a[j] * dmin
        for i in range(n):
            x[i] += delta[best, i]
        cnt[best] += 1
        P[best] += exponential(rkey[best], cnt[best])
        events += 1
        _raw_propensities(x, sub, rate, a)
        if record:
            if nrec < cap:
                rec_t[nrec] = t
                rec_x[nrec, :] = x
            nrec += 1
    if record and status == 0 and t < t_end:
        if nrec < cap:
            rec_t[nrec] = t_end
            rec_x[nrec, :] = x
        nrec += 1
    return events, status, nrec


@nb.njit(cache=True, parallel=True)
def _mnrm_batch(xs, sub, delta, rate, t_end, keys, max_events):
    m = xs.shape[0]
    events = np.zeros(m, dtype=np.int64)
    status = np.zeros(m, dtype=np.int64)
    dummy_t = np.empty(0)
    dummy_x = np.empty((0, xs.shape[1]))
    for p in nb.prange(m):
        x = xs[p].copy()
        e, s, _ = _mnrm(x, sub, delta, rate, t_end, keys[p], max_events, dummy_t, dummy_x, False)
        xs[p, :] = x
        events[p] = e
        status[p] = s
    return events, status


class FullKernel:
    """Transition kernel of the exact scaled process, batched over particles.

    ``kernel(states, dt, rng)`` advances every row of ``states`` (scaled) by
    ``dt`` minutes; particle ``p`` draws from ``rng`` substream ``p``.
    """

    kind = "full"

    def __init__(self, net: ReactionNetwork, spec: ScalingSpec, max_events: int = DEFAULT_MAX_EVENTS):
        spec.check(net)
        report = analyze_timescales(net, spec)
        self.net = net
        self.spec = spec
        self.gamma1 = report.gamma1
        self.sub = np.ascontiguousarray(net.substrate_matrix())
        self.delta = np.ascontiguousarray(net.change_matrix().astype(np.float64))
        self.rate = net.rate_constants() * spec.N ** float(self.gamma1)
        self.factor = spec.species_factor()
        self.max_events = int(max_events)
        self.last_events = 0

    def to_raw(self, states) -> np.ndarray:
        return np.rint(np.asarray(states, dtype=np.float64) / self.factor)

    def to_scaled(self, raw) -> np.ndarray:
        return raw * self.factor

    def __call__(self, states, dt: float, rng: RngStream) -> np.ndarray:
        if not dt > 0:
            raise ValueError("dt must be positive")
        xs = np.ascontiguousarray(self.to_raw(np.atleast_2d(states)))
        if np.any(xs < 0):
            raise ValueError("negative copy numbers in state")
        keys = particle_keys(rng, xs.shape[0])
        events, status = _mnrm_batch(
            xs, self.sub, self.delta, self.rate, float(dt), keys, self.max_events
        )
        self.last_events = int(events.sum())
        if np.any(status):
            raise ExplosionError(
                f"event cap {self.max_events} exceeded in {int(np.count_nonzero(status))} particle(s)"
            )
        return self.to_scaled(xs)

    def trajectory(self, x0, t_end: float, rng: RngStream) -> Trajectory:
        if not t_end > 0:
            raise ValueError("t_end must be positive")
        x0 = np.asarray(x0, dtype=np.float64)
        raw0 = self.to_raw(x0)
        if np.any(raw0 < 0):
            raise ValueError("negative copy numbers in initial state")
        key = np.uint64(particle_keys(rng, 1)[0])
        cap = 1024
        while True:
            x = raw0.copy()
            rec_t = np.empty(cap)
            rec_x = np.empty((cap, len(x)))
            events, status, nrec = _mnrm(
                x, self.sub, self.delta, self.rate, float(t_end), key,
                self.max_events, rec_t, rec_x, True,
            )
            if nrec <= cap:
                break
            cap = nrec
        traj = Trajectory(
            rec_t[:nrec].copy(),
            self.to_scaled(rec_x[:nrec]),
            "pure-jump",
            int(events),
            self.net.names,
        )
        if status:
            raise ExplosionError(f"event cap {self.max_events} exceeded", traj)
        return traj


def simulate_full(net, spec, x0, t_end, rng: RngStream, max_events: int = DEFAULT_MAX_EVENTS) -> Trajectory:
    return FullKernel(net, spec, max_events).trajectory(x0, t_end, rng)


def sample_kernel(net, spec, x, dt, rng: RngStream, max_events: int = DEFAULT_MAX_EVENTS) -> np.ndarray:
    return FullKernel(net, spec, max_events)(np.asarray(x, dtype=float)[None, :], dt, rng)[0]
