"""Reduced piecewise-deterministic simulation.

Fast reactions contribute an ODE drift on their own-scale species; natural
scale reactions fire as jumps when their integrated hazard crosses the next
point of their unit-rate Poisson process.  Between jumps the drift is
integrated with fixed-step RK4.

Two code paths share one interface:

* constant-hazard: every jump reaction consumes only natural-scale species,
  so hazards are constant between jumps and the next firing time is exact;
* general: hazards are integrated alongside the state (RK4 on the augmented
  system, i.e. Simpson's rule on the RK4 stages) and a crossing inside a step
  is located by safeguarded Newton on the hazard surplus.

Reaction ``j`` draws its Poisson points from the same key as in
:mod:`crnfilter.ssa`, so the two simulators can be coupled through common
random numbers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .rng import RngStream, derive_key, exponential, particle_keys
from .scaling import ReducedModel
from .ssa import ExplosionError, Trajectory

__all__ = [
    "HybridStepConfig",
    "ReducedKernel",
    "sample_reduced_kernel",
    "simulate_reduced",
]


@dataclass(frozen=True)
class HybridStepConfig:
    ode_step: float = 0.01
    hazard_tol: float = 1e-8
    max_jumps: int = 10**7

    def __post_init__(self):
        if not self.ode_step > 0:
            raise ValueError("ode_step must be positive")
        if not 0 < self.hazard_tol <= 1e-2:
            raise ValueError("hazard_tol must lie in (0, 1e-2]")
        if self.max_jumps < 1:
            raise ValueError("max_jumps must be >= 1")


@nb.njit(inline="always")
def _lam(j, x, sub, kp, azero):
    n = sub.shape[1]
    v = kp[j]
    for i in range(n):
        s = sub[j, i]
        if s:
            xi = x[i]
            if azero[i]:
                if xi < s - 1e-9:
                    return 0.0
                for ell in range(s):
                    v *= xi - ell
            else:
                if xi <= 0.0:
                    return 0.0
                for ell in range(s):
                    v *= xi
    return v


@nb.njit(inline="always")
def _drift(x, out, sub, kp, azero, didx, dvec):
    n = x.shape[0]
    for i in range(n):
        out[i] = 0.0
    for k in range(didx.shape[0]):
        lam = _lam(didx[k], x, sub, kp, azero)
        if lam != 0.0:
            for i in range(n):
                out[i] += lam * dvec[k, i]


@nb.njit(inline="always")
def _hazards(x, out, sub, kp, azero, jidx):
    for k in range(jidx.shape[0]):
        out[k] = _lam(jidx[k], x, sub, kp, azero)


@nb.njit(inline="always")
def _rk4(x, T, h, with_hazard, sub, kp, azero, didx, dvec, jidx, k1, k2, k3, k4, xs, g1, g2, g3, g4):
    """One RK4 step of size h in place on x (and hazard integrals T)."""
    n = x.shape[0]
    nj = jidx.shape[0]
    _drift(x, k1, sub, kp, azero, didx, dvec)
    if with_hazard:
        _hazards(x, g1, sub, kp, azero, jidx)
    for i in range(n):
        xs[i] = x[i] + 0.5 * h * k1[i]
    _drift(xs, k2, sub, kp, azero, didx, dvec)
    if with_hazard:
        _hazards(xs, g2, sub, kp, azero, jidx)
    for i in range(n):
        xs[i] = x[i] + 0.5 * h * k2[i]
    _drift(xs, k3, sub, kp, azero, didx, dvec)
    if with_hazard:
        _hazards(xs, g3, sub, kp, azero, jidx)
    for i in range(n):
        xs[i] = x[i] + h * k3[i]
    _drift(xs, k4, sub, kp, azero, didx, dvec)
    if with_hazard:
        _hazards(xs, g4, sub, kp, azero, jidx)
    for i in range(n):
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    if with_hazard:
        for k in range(nj):
            T[k] += h / 6.0 * (g1[k] + 2.0 * g2[k] + 2.0 * g3[k] + g4[k])


@nb.njit(inline="always")
def _record(rec_t, rec_x, nrec, t, x):
    if nrec < rec_t.shape[0]:
        rec_t[nrec] = t
        rec_x[nrec, :] = x
    return nrec + 1


@nb.njit(inline="always")
def _rec_last(rec_t, nrec):
    # overflowed buffers force a rerun, so the value only matters when it fits
    if nrec == 0 or nrec > rec_t.shape[0]:
        return -np.inf
    return rec_t[nrec - 1]


@nb.njit(cache=True)
def _pdmp(x, sub, kp, azero, didx, dvec, jidx, jvec, const_hazard, t_end, h_max,
          htol, key, max_jumps, rec_t, rec_x, record):
    """Advance scaled state x in place to t_end.

    Returns (jumps, ode_steps, status, records); status 1 = jump cap hit,
    status 2 = non-finite drift.
    """
    n = x.shape[0]
    nj = jidx.shape[0]
    nd = didx.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    xs = np.empty(n)
    g1 = np.empty(nj)
    g2 = np.empty(nj)
    g3 = np.empty(nj)
    g4 = np.empty(nj)
    T = np.zeros(nj)
    P = np.empty(nj)
    lam = np.empty(nj)
    rkey = np.empty(nj, dtype=np.uint64)
    cnt = np.zeros(nj, dtype=np.int64)
    for k in range(nj):
        rkey[k] = derive_key(key, jidx[k])
        P[k] = exponential(rkey[k], 0)
    nrec = 0
    if record:
        nrec = _record(rec_t, rec_x, nrec, 0.0, x)
    t = 0.0
    jumps = 0
    steps = 0
    status = 0

    if const_hazard:
        while True:
            _hazards(x, lam, sub, kp, azero, jidx)
            best = -1
            dmin = np.inf
            for k in range(nj):
                if lam[k] > 0.0:
                    d = (P[k] - T[k]) / lam[k]
                    if d < dmin:
                        dmin = d
                        best = k
            fire = best >= 0 and t + dmin <= t_end
            target = t + dmin if fire else t_end
            span = target - t
            if nd > 0 and span > 0.0:
                nsub = int(np.ceil(span / h_max))
                hs = span / nsub
                for s in range(nsub):
                    _rk4(x, T, hs, False, sub, kp, azero, didx, dvec, jidx, k1, k2, k3, k4, xs, g1, g2, g3, g4)
                    steps += 1
                    if record and not (fire and s == nsub - 1):
                        ts = target if s == nsub - 1 else t + (s + 1) * hs
                        nrec = _record(rec_t, rec_x, nrec, ts, x)
                for i in range(n):
                    if not np.isfinite(x[i]):
                        status = 2
                if status:
                    break
            for k in range(nj):
                T[k] += lam[k] * span
            t = target
            if not fire:
                break
            if jumps >= max_jumps:
                status = 1
                break
            for i in range(n):
                x[i] += jvec[best, i]
            cnt[best] += 1
            P[best] += exponential(rkey[best], cnt[best])
            jumps += 1
            if record:
                nrec = _record(rec_t, rec_x, nrec, t, x)
        if record and status == 0 and _rec_last(rec_t, nrec) < t_end:
            nrec = _record(rec_t, rec_x, nrec, t_end, x)
        return jumps, steps, status, nrec

    x0 = np.empty(n)
    T0 = np.empty(nj)
    xt = np.empty(n)
    Tt = np.empty(nj)
    while t_end - t > 1e-12 * max(1.0, t_end):
        h = min(h_max, t_end - t)
        for i in range(n):
            x0[i] = x[i]
        for k in range(nj):
            T0[k] = T[k]
        _rk4(x, T, h, True, sub, kp, azero, didx, dvec, jidx, k1, k2, k3, k4, xs, g1, g2, g3, g4)
        steps += 1
        for i in range(n):
            if not np.isfinite(x[i]):
                status = 2
        if status:
            break
        crossed = False
        for k in range(nj):
            if T[k] >= P[k]:
                crossed = True
        if not crossed:
            t += h
            if record:
                nrec = _record(rec_t, rec_x, nrec, t, x)
            continue
        # earliest crossing inside (0, h]
        best = -1
        tau_best = np.inf
        for k in range(nj):
            if T[k] < P[k]:
                continue
            lo = 0.0
            hi = h
            tau = h * (P[k] - T0[k]) / (T[k] - T0[k])
            it = 0
            while hi - lo > htol * h and it < 200:
                it += 1
                if not (lo < tau < hi):
                    tau = 0.5 * (lo + hi)
                for i in range(n):
                    xt[i] = x0[i]
                for q in range(nj):
                    Tt[q] = T0[q]
                _rk4(xt, Tt, tau, True, sub, kp, azero, didx, dvec, jidx, k1, k2, k3, k4, xs, g1, g2, g3, g4)
                f = Tt[k] - P[k]
                if f >= 0.0:
                    hi = tau
                else:
                    lo = tau
                slope = _lam(jidx[k], xt, sub, kp, azero)
                if slope > 0.0:
                    tau = tau - f / slope
                else:
                    tau = 0.5 * (lo + hi)
                if f < 0.0 and -f <= 1e-15 * max(1.0, P[k]):
                    hi = min(hi, max(tau, lo))
                    break
            if hi < tau_best:
                tau_best = hi
                best = k
        for i in range(n):
            x[i] = x0[i]
        for k in range(nj):
            T[k] = T0[k]
        _rk4(x, T, tau_best, True, sub, kp, azero, didx, dvec, jidx, k1, k2, k3, k4, xs, g1, g2, g3, g4)
        t += tau_best
        if jumps >= max_jumps:
            status = 1
            break
        for i in range(n):
            x[i] += jvec[best, i]
        if T[best] < P[best]:
            T[best] = P[best]
        cnt[best] += 1
        P[best] += exponential(rkey[best], cnt[best])
        jumps += 1
        if record:
            nrec = _record(rec_t, rec_x, nrec, t, x)
    if record and status == 0 and _rec_last(rec_t, nrec) < t_end:
        nrec = _record(rec_t, rec_x, nrec, t_end, x)
    return jumps, steps, status, nrec


@nb.njit(cache=True, parallel=True)
def _pdmp_batch(xs, sub, kp, azero, didx, dvec, jidx, jvec, const_hazard, t_end,
                h_max, htol, keys, max_jumps):
    m = xs.shape[0]
    jumps = np.zeros(m, dtype=np.int64)
    steps = np.zeros(m, dtype=np.int64)
    status = np.zeros(m, dtype=np.int64)
    dummy_t = np.empty(0)
    dummy_x = np.empty((0, xs.shape[1]))
    for p in nb.prange(m):
        x = xs[p].copy()
        j, s, st, _ = _pdmp(x, sub, kp, azero, didx, dvec, jidx, jvec, const_hazard,
                            t_end, h_max, htol, keys[p], max_jumps, dummy_t, dummy_x, False)
        xs[p, :] = x
        jumps[p] = j
        steps[p] = s
        status[p] = st
    return jumps, steps, status


class ReducedKernel:
    """Transition kernel of the reduced model, batched like ``FullKernel``."""

    kind = "reduced"

    def __init__(self, reduced: ReducedModel, cfg: HybridStepConfig | None = None):
        self.reduced = reduced
        self.cfg = cfg or HybridStepConfig()
        net = reduced.network
        self.net = net
        self.sub = np.ascontiguousarray(net.substrate_matrix())
        self.kp = np.asarray(reduced.scaled_rates, dtype=np.float64)
        self.azero = np.array([a == 0 for a in reduced.spec.alpha], dtype=np.bool_)
        self.didx = np.asarray(reduced.drift_reactions, dtype=np.int64)
        self.dvec = np.ascontiguousarray(reduced.drift_vectors().reshape(len(self.didx), net.n_species))
        self.jidx = np.asarray(reduced.jump_reactions, dtype=np.int64)
        self.jvec = np.ascontiguousarray(reduced.jump_vectors().reshape(len(self.jidx), net.n_species))
        self.const_hazard = bool(
            all(self.azero[i] for j in self.jidx for i in np.flatnonzero(self.sub[j]))
        )
        self.last_jumps = 0
        self.last_steps = 0

    def _args(self):
        return (self.sub, self.kp, self.azero, self.didx, self.dvec, self.jidx, self.jvec,
                self.const_hazard)

    def __call__(self, states, dt: float, rng: RngStream) -> np.ndarray:
        if not dt > 0:
            raise ValueError("dt must be positive")
        xs = np.array(np.atleast_2d(states), dtype=np.float64, order="C")
        keys = particle_keys(rng, xs.shape[0])
        jumps, steps, status = _pdmp_batch(
            xs, *self._args(), float(dt), self.cfg.ode_step, self.cfg.hazard_tol, keys,
            self.cfg.max_jumps,
        )
        self.last_jumps = int(jumps.sum())
        self.last_steps = int(steps.sum())
        if np.any(status == 2):
            raise FloatingPointError("non-finite drift in reduced model")
        if np.any(status == 1):
            raise ExplosionError(f"jump cap {self.cfg.max_jumps} exceeded")
        return xs

    def trajectory(self, x0, t_end: float, rng: RngStream) -> Trajectory:
        if not t_end > 0:
            raise ValueError("t_end must be positive")
        key = np.uint64(particle_keys(rng, 1)[0])
        cap = 1024
        while True:
            x = np.array(x0, dtype=np.float64)
            rec_t = np.empty(cap)
            rec_x = np.empty((cap, len(x)))
            jumps, steps, status, nrec = _pdmp(
                x, *self._args(), float(t_end), self.cfg.ode_step, self.cfg.hazard_tol,
                key, self.cfg.max_jumps, rec_t, rec_x, True,
            )
            if nrec <= cap:
                break
            cap = nrec
        traj = Trajectory(rec_t[:nrec].copy(), rec_x[:nrec].copy(), "hybrid", int(jumps),
                          self.net.names)
        traj.ode_steps = int(steps)
        if status == 2:
            raise FloatingPointError("non-finite drift in reduced model")
        if status == 1:
            raise ExplosionError(f"jump cap {self.cfg.max_jumps} exceeded", traj)
        return traj


def simulate_reduced(net, reduced: ReducedModel, x0, t_end, rng: RngStream,
                     cfg: HybridStepConfig | None = None) -> Trajectory:
    if reduced.network is not net and reduced.network != net:
        raise ValueError("reduced model was built from a different network")
    return ReducedKernel(reduced, cfg).trajectory(x0, t_end, rng)


def sample_reduced_kernel(net, reduced: ReducedModel, x, dt, rng: RngStream,
                          cfg: HybridStepConfig | None = None) -> np.ndarray:
    if reduced.network is not net and reduced.network != net:
        raise ValueError("reduced model was built from a different network")
    return ReducedKernel(reduced, cfg)(np.asarray(x, dtype=float)[None, :], dt, rng)[0]
