"""Multiscale normalisation and reduction to a piecewise-deterministic model.

All exponent arithmetic is done on ``Fraction`` so the drift / jump / drop
classification never depends on float ties.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .network import ReactionNetwork, falling_factorial

__all__ = [
    "ReducedModel",
    "ScalingSpec",
    "TimescaleReport",
    "analyze_timescales",
    "limit_propensity",
    "reduce",
    "rescale_network",
    "scaled_propensity",
]

_LATTICE_RTOL = 1e-9


@dataclass(frozen=True)
class ScalingSpec:
    N: float
    alpha: tuple[Fraction, ...]
    beta: tuple[Fraction, ...]
    gamma: Fraction | None = None  # None means "analyse at gamma_1"

    def __post_init__(self):
        if not self.N > 1:
            raise ValueError(f"scaling factor N must exceed 1, got {self.N}")

    @classmethod
    def from_network(cls, net: ReactionNetwork, N: float) -> "ScalingSpec":
        return cls(float(N), net.alpha, net.beta)

    def check(self, net: ReactionNetwork) -> None:
        if len(self.alpha) != net.n_species or len(self.beta) != net.n_reactions:
            raise ValueError("scaling exponents do not match network dimensions")

    def species_factor(self) -> np.ndarray:
        """N^{-alpha_i}: multiply raw counts by this to get scaled abundances."""
        return np.array([self.N ** -float(a) for a in self.alpha])

    def scaled_rates(self, net: ReactionNetwork) -> np.ndarray:
        """k'_j = k_j N^{-beta_j}."""
        return np.array(
            [r.rate_constant * self.N ** -float(b) for r, b in zip(net.reactions, self.beta)]
        )


def rescale_network(net: ReactionNetwork, N_ref: float, N_new: float) -> ReactionNetwork:
    """Keep k'_j fixed and rebuild raw constants k_j = k'_j N_new^{beta_j}."""
    k = [
        r.rate_constant * (N_new / N_ref) ** float(r.beta) for r in net.reactions
    ]
    return net.with_rate_constants(k)


def _reaction(net, j):
    if not 0 <= j < net.n_reactions:
        raise IndexError(f"reaction index {j} out of range [0, {net.n_reactions})")
    return net.reactions[j]


def scaled_propensity(net: ReactionNetwork, spec: ScalingSpec, j: int, x) -> float:
    r = _reaction(net, j)
    out = r.rate_constant * spec.N ** -float(spec.beta[j])
    for i, v in enumerate(r.substrate):
        if not v:
            continue
        step = spec.N ** -float(spec.alpha[i])
        if x[i] < step * v * (1 - _LATTICE_RTOL):
            return 0.0
        for ell in range(v):
            out *= x[i] - ell * step
    return out


def limit_propensity(net: ReactionNetwork, spec: ScalingSpec, j: int, x) -> float:
    """N -> infinity limit of the scaled propensity.

    Falling factorial on natural-scale (alpha = 0) species, plain power on
    abundant species.
    """
    r = _reaction(net, j)
    out = r.rate_constant * spec.N ** -float(spec.beta[j])
    for i, v in enumerate(r.substrate):
        if not v:
            continue
        if spec.alpha[i] == 0:
            out *= falling_factorial(x[i], v)
        else:
            out *= max(x[i], 0.0) ** v
    return out


@dataclass(frozen=True)
class TimescaleReport:
    rho_tilde: tuple[Fraction, ...]
    species_scale: tuple[Fraction | None, ...]  # None for inert species
    gamma1: Fraction

    def to_dict(self, net: ReactionNetwork | None = None) -> dict:
        out = {
            "rho_tilde": [str(r) for r in self.rho_tilde],
            "species_scale": [None if s is None else str(s) for s in self.species_scale],
            "gamma1": str(self.gamma1),
        }
        if net is not None:
            out["species"] = net.names
        return out


def analyze_timescales(net: ReactionNetwork, spec: ScalingSpec) -> TimescaleReport:
    spec.check(net)
    rho = tuple(
        spec.beta[j] + sum(v * a for v, a in zip(r.substrate, spec.alpha))
        for j, r in enumerate(net.reactions)
    )
    scales: list[Fraction | None] = []
    for i in range(net.n_species):
        touching = [
            rho[j] for j, r in enumerate(net.reactions) if r.product[i] != r.substrate[i]
        ]
        scales.append(spec.alpha[i] - max(touching) if touching else None)
    active = [s for s in scales if s is not None]
    if not active:
        raise ValueError("no dynamics: every species is inert")
    return TimescaleReport(rho, tuple(scales), min(active))


@dataclass(frozen=True)
class ReducedModel:
    """Partition of reactions at the fastest timescale.

    Masks are 0/1 vectors over species; ``drift_masks[k]`` belongs to
    ``drift_reactions[k]``.
    """

    network: ReactionNetwork
    spec: ScalingSpec
    report: TimescaleReport
    drift_reactions: tuple[int, ...]
    drift_masks: tuple[tuple[int, ...], ...]
    jump_reactions: tuple[int, ...]
    jump_mask: tuple[int, ...]
    dropped_reactions: tuple[int, ...]
    scaled_rates: tuple[float, ...]

    @property
    def gamma1(self) -> Fraction:
        return self.report.gamma1

    def drift_vectors(self) -> np.ndarray:
        zeta = self.network.change_matrix()
        out = np.zeros((len(self.drift_reactions), self.network.n_species))
        for k, (j, mask) in enumerate(zip(self.drift_reactions, self.drift_masks)):
            out[k] = zeta[j] * np.asarray(mask)
        return out

    def jump_vectors(self) -> np.ndarray:
        zeta = self.network.change_matrix()
        mask = np.asarray(self.jump_mask)
        out = np.zeros((len(self.jump_reactions), self.network.n_species))
        for k, j in enumerate(self.jump_reactions):
            out[k] = zeta[j] * mask
        return out

    def frozen_species(self) -> list[int]:
        """Species moved by no drift vector and no (masked) jump vector."""
        moved = np.zeros(self.network.n_species, dtype=bool)
        for vec in (self.drift_vectors(), self.jump_vectors()):
            if len(vec):
                moved |= np.any(vec != 0, axis=0)
        return [i for i in range(self.network.n_species) if not moved[i]]

    def to_dict(self) -> dict:
        names = self.network.names

        def masked(mask):
            return [names[i] for i, m in enumerate(mask) if m]

        return {
            "N": self.spec.N,
            "gamma1": str(self.gamma1),
            "timescales": self.report.to_dict(self.network),
            "drift": [
                {"reaction": j, "name": self.network.reactions[j].name, "species": masked(m)}
                for j, m in zip(self.drift_reactions, self.drift_masks)
            ],
            "jump": [
                {"reaction": j, "name": self.network.reactions[j].name}
                for j in self.jump_reactions
            ],
            "jump_species": masked(self.jump_mask),
            "dropped": list(self.dropped_reactions),
            "scaled_rates": list(self.scaled_rates),
        }

    def report_text(self) -> str:
        d = self.to_dict()
        lines = [f"N = {d['N']:g}, gamma1 = {d['gamma1']}"]
        for j, r in enumerate(self.report.rho_tilde):
            cls = (
                "drift" if j in self.drift_reactions
                else "jump" if j in self.jump_reactions
                else "dropped"
            )
            name = self.network.reactions[j].name or f"R{j + 1}"
            lines.append(
                f"  {name:<22s} rho~ = {str(r):>5s}  k' = {self.scaled_rates[j]:.6g}  {cls}"
            )
        for i, s in enumerate(self.report.species_scale):
            lines.append(
                f"  species {self.network.names[i]:<6s} alpha = {self.spec.alpha[i]}"
                f"  timescale = {'inert' if s is None else s}"
            )
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def reduce(net: ReactionNetwork, spec: ScalingSpec) -> ReducedModel:
    report = analyze_timescales(net, spec)
    g1 = report.gamma1 if spec.gamma is None else spec.gamma
    drift, masks, jump, dropped = [], [], [], []
    for j, rho in enumerate(report.rho_tilde):
        c = g1 + rho
        if c > 0:
            drift.append(j)
            masks.append(tuple(int(a == c) for a in spec.alpha))
        elif c == 0:
            jump.append(j)
        else:
            dropped.append(j)
    jump_mask = tuple(int(a == 0) for a in spec.alpha)
    return ReducedModel(
        network=net,
        spec=spec,
        report=report,
        drift_reactions=tuple(drift),
        drift_masks=tuple(masks),
        jump_reactions=tuple(jump),
        jump_mask=jump_mask,
        dropped_reactions=tuple(dropped),
        scaled_rates=tuple(float(k) for k in spec.scaled_rates(net)),
    )
