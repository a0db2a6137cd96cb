"""Reproducible random streams.

Python-side draws (initial conditions, observation noise, resampling) use
numpy Generators keyed by ``SeedSequence``.  Inside the JIT kernels every
particle and every reaction gets its own counter-based stream built on the
SplitMix64 finaliser, so a draw is a pure function of
``(stream key, particle, reaction, firing count)``.  This makes the kernels
independent of thread count, and lets the exact and reduced simulators share
the unit-rate Poisson process of a reaction when they are given the same key.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

__all__ = ["RngStream", "STREAMS", "particle_keys"]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# Fixed stream ids; ground truth never shares a stream with either filter.
STREAMS = {
    "truth": 1,
    "observation_noise": 2,
    "init": 3,
    "resample": 4,
    "propagate_full": 5,
    "propagate_reduced": 6,
    "convergence": 7,
}


@dataclass(frozen=True)
class RngStream:
    """A named random stream; ``(seed, stream_id, path)`` fixes every draw."""

    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()

    def _seq(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            entropy=int(self.seed) & 0xFFFFFFFFFFFFFFFF,
            spawn_key=(int(self.stream_id),) + tuple(int(p) for p in self.path),
        )

    def substream(self, *index: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.path + tuple(index))

    @property
    def key(self) -> int:
        """64-bit key for the JIT kernels."""
        return int(self._seq().generate_state(1, np.uint64)[0])

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self._seq()))


@nb.njit(inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(inline="always")
def derive_key(key, index):
    return mix64(key ^ mix64(np.uint64(index) * _GOLDEN + _GOLDEN))


@nb.njit(inline="always")
def uniform(key, counter):
    """Uniform on the open interval (0, 1)."""
    z = mix64(key + np.uint64(counter) * _GOLDEN)
    return (float(z >> _S11) + 0.5) * _INV53


@nb.njit(inline="always")
def exponential(key, counter):
    return -np.log(uniform(key, counter))


@nb.njit(cache=True)
def _particle_keys(key, m):
    out = np.empty(m, dtype=np.uint64)
    for p in range(m):
        out[p] = derive_key(key, p)
    return out


def particle_keys(stream: RngStream, m: int) -> np.ndarray:
    return _particle_keys(np.uint64(stream.key), m)
