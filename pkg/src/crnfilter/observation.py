"""Noisy fluorescence readouts and the change-of-measure weight."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .network import ConfigError, ReactionNetwork

__all__ = [
    "Channel",
    "ObservationModel",
    "ObservationSequence",
    "log_weight",
    "observe",
    "read_observations_csv",
    "weight",
    "write_observations_csv",
]

CHANNEL_KEYS = {"species", "gain", "lower", "upper", "units"}


@dataclass(frozen=True)
class Channel:
    """h(x) = clip(gain * x_species [* N^alpha if units == raw], lower, upper)."""

    species: int
    gain: float
    upper: float
    lower: float = 0.0
    raw_factor: float = 1.0  # N^{alpha_i} when the channel reads raw counts

    def __post_init__(self):
        if not (np.isfinite(self.lower) and np.isfinite(self.upper) and self.lower <= self.upper):
            raise ValueError("channel clamp bounds must be finite with lower <= upper")

    @property
    def bound(self) -> float:
        return max(abs(self.lower), abs(self.upper))

    def __call__(self, states: np.ndarray) -> np.ndarray:
        x = np.asarray(states)[..., self.species]
        return np.clip(self.gain * self.raw_factor * x, self.lower, self.upper)


@dataclass(frozen=True)
class ObservationModel:
    channels: tuple[Channel, ...]
    sample_period: float = 2.0
    noise_sd: float = 1.0  # unit variance is the only verified setting

    def __post_init__(self):
        if not self.channels:
            raise ValueError("observation model needs at least one channel")
        if not self.sample_period > 0:
            raise ValueError("sample_period must be positive")

    @property
    def m(self) -> int:
        return len(self.channels)

    def h(self, states) -> np.ndarray:
        """Channel means; shape (..., m)."""
        return np.stack([c(states) for c in self.channels], axis=-1)

    @property
    def h_bound(self) -> float:
        return max(c.bound for c in self.channels)

    @classmethod
    def from_dict(cls, doc: dict, net: ReactionNetwork, N: float = 1.0) -> "ObservationModel":
        chans = []
        for i, c in enumerate(doc.get("channels") or []):
            bad = set(c) - CHANNEL_KEYS
            if bad:
                raise ConfigError(f"observation.channels[{i}]: unknown keys {sorted(bad)}")
            try:
                sp = net.index(str(c["species"]))
            except KeyError:
                raise ConfigError(
                    f"observation.channels[{i}]: unknown species {c.get('species')!r}"
                ) from None
            units = c.get("units", "scaled")
            if units not in ("raw", "scaled"):
                raise ConfigError(f"observation.channels[{i}]: units must be raw or scaled")
            factor = N ** float(net.species[sp].alpha) if units == "raw" else 1.0
            chans.append(
                Channel(sp, float(c.get("gain", 1.0)), float(c["upper"]),
                        float(c.get("lower", 0.0)), factor)
            )
        bad = set(doc) - {"channels", "sample_period", "noise_sd"}
        if bad:
            raise ConfigError(f"observation: unknown keys {sorted(bad)}")
        return cls(tuple(chans), float(doc.get("sample_period", 2.0)),
                   float(doc.get("noise_sd", 1.0)))


@dataclass(frozen=True)
class ObservationSequence:
    times: np.ndarray
    values: np.ndarray  # (len(times), m)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if len(t) != len(v):
            raise ValueError("times and values differ in length")
        if np.any(np.diff(t) <= 0) or (len(t) and t[0] <= 0):
            raise ValueError("observation times must be positive and strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.times)


def observe(model: ObservationModel, x, rng: np.random.Generator | None) -> np.ndarray:
    """h(x) plus independent Gaussian noise; ``rng=None`` gives the noiseless readout."""
    hx = model.h(np.asarray(x, dtype=float))
    if rng is None:
        return hx
    return hx + model.noise_sd * rng.standard_normal(hx.shape)


def log_weight(model: ObservationModel, x, y) -> np.ndarray:
    """log g(x, y) = sum_l h_l(x) y_l - h_l(x)^2 / 2, vectorised over leading axes of x."""
    hx = model.h(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != model.m:
        raise ValueError(f"observation has {y.shape[-1]} channels, model has {model.m}")
    s2 = model.noise_sd ** 2
    return np.sum(hx * y - 0.5 * hx * hx, axis=-1) / s2


def weight(model: ObservationModel, x, y):
    lw = log_weight(model, x, y)
    with np.errstate(over="ignore"):
        g = np.exp(lw)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError(f"weight overflows (log g = {lw}); use log_weight")
    return float(g) if np.ndim(g) == 0 else g


def write_observations_csv(obs: ObservationSequence, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *(f"y{i + 1}" for i in range(obs.values.shape[1]))])
        for t, y in zip(obs.times, obs.values):
            w.writerow([repr(float(t)), *(repr(float(v)) for v in y)])


def read_observations_csv(path) -> ObservationSequence:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "t":
        raise ValueError(f"{path}: expected header 't,y1,...'")
    data = np.array([[float(v) for v in r] for r in body if r], dtype=float)
    if data.size == 0:
        return ObservationSequence(np.empty(0), np.empty((0, len(header) - 1)))
    return ObservationSequence(data[:, 0], data[:, 1:])
