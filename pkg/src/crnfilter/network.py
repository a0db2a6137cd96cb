"""Mass-action reaction networks: declaration, YAML config, propensities.

Config layout (YAML)::

    species:
      - {name: S1, alpha: 0, initial: "bernoulli(0.3333333333333333)"}
      - {name: S2, alpha: 0, initial: "complement_of(S1)"}
    reactions:
      - {substrates: {S1: 1}, products: {S2: 1}, k: 0.014, beta: 0}
      - "S2 -> S3 + S2, k=0.715"

Species keys: ``name``, ``alpha``, ``initial``.  Reaction keys:
``substrates``, ``products``, ``equation`` (alternative to the two maps),
``k``, ``beta``, ``name``.  Anything else is rejected.  Exponents may be
integers or rationals written ``"p/q"``.  Initial descriptors describe the
*scaled* abundance: ``point(v)``, ``bernoulli(p)``, ``poisson(mean)``,
``complement_of(name)`` (value ``1 - x_name``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import yaml

__all__ = [
    "ConfigError",
    "InitialLaw",
    "Reaction",
    "ReactionNetwork",
    "Species",
    "falling_factorial",
    "parse_network",
    "propensity",
    "serialize_network",
    "stoichiometry_change",
]

MAX_STOICH = 4
NETWORK_KEYS = {"species", "reactions"}
# Sections other modules read from the same file.
EXTRA_SECTIONS = {"scaling", "observation", "experiment", "oracle"}
SPECIES_KEYS = {"name", "alpha", "initial"}
REACTION_KEYS = {"name", "substrates", "products", "equation", "k", "beta"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class InitialLaw:
    kind: str  # point | bernoulli | poisson | complement_of
    value: float = 0.0
    ref: str | None = None

    def __str__(self) -> str:
        if self.kind == "complement_of":
            return f"complement_of({self.ref})"
        return f"{self.kind}({self.value!r})"


_INIT_RE = re.compile(r"^\s*(point|bernoulli|poisson|complement_of)\s*\(\s*([^)]*?)\s*\)\s*$")


def _parse_initial(desc, where: str) -> InitialLaw:
    if isinstance(desc, (int, float)) and not isinstance(desc, bool):
        return InitialLaw("point", float(desc))
    m = _INIT_RE.match(str(desc))
    if not m:
        raise ConfigError(f"{where}: bad initial descriptor {desc!r}")
    kind, arg = m.groups()
    if kind == "complement_of":
        return InitialLaw(kind, ref=arg)
    try:
        v = float(arg)
    except ValueError:
        raise ConfigError(f"{where}: bad numeric argument {arg!r}") from None
    if kind == "bernoulli" and not 0.0 <= v <= 1.0:
        raise ConfigError(f"{where}: bernoulli probability {v} outside [0, 1]")
    if kind == "poisson" and v < 0:
        raise ConfigError(f"{where}: negative poisson mean {v}")
    return InitialLaw(kind, v)


@dataclass(frozen=True)
class Species:
    id: int
    name: str
    alpha: Fraction = Fraction(0)
    initial: InitialLaw = InitialLaw("point", 0.0)


@dataclass(frozen=True)
class Reaction:
    substrate: tuple[int, ...]
    product: tuple[int, ...]
    rate_constant: float
    beta: Fraction = Fraction(0)
    name: str = ""


@dataclass(frozen=True)
class ReactionNetwork:
    species: tuple[Species, ...]
    reactions: tuple[Reaction, ...]
    _index: dict = field(default=None, compare=False, repr=False, hash=False)

    def __post_init__(self):
        if not self.species:
            raise ConfigError("no species")
        if not self.reactions:
            raise ConfigError("no reactions")
        names = [s.name for s in self.species]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate species names")
        n = len(self.species)
        for j, r in enumerate(self.reactions):
            if len(r.substrate) != n or len(r.product) != n:
                raise ConfigError(f"reaction {j}: stoichiometry length != species count")
            if min(r.substrate + r.product) < 0:
                raise ConfigError(f"reaction {j}: negative stoichiometry")
            if not (r.rate_constant > 0 and np.isfinite(r.rate_constant)):
                raise ConfigError(f"reaction {j}: rate constant must be positive")
        object.__setattr__(self, "_index", {s.name: s.id for s in self.species})

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_reactions(self) -> int:
        return len(self.reactions)

    def index(self, name: str) -> int:
        return self._index[name]

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.species]

    @property
    def alpha(self) -> tuple[Fraction, ...]:
        return tuple(s.alpha for s in self.species)

    @property
    def beta(self) -> tuple[Fraction, ...]:
        return tuple(r.beta for r in self.reactions)

    def substrate_matrix(self) -> np.ndarray:
        return np.array([r.substrate for r in self.reactions], dtype=np.int64)

    def change_matrix(self) -> np.ndarray:
        return np.array(
            [np.subtract(r.product, r.substrate) for r in self.reactions], dtype=np.int64
        )

    def rate_constants(self) -> np.ndarray:
        return np.array([r.rate_constant for r in self.reactions])

    def with_rate_constants(self, k) -> "ReactionNetwork":
        reactions = tuple(
            Reaction(r.substrate, r.product, float(kj), r.beta, r.name)
            for r, kj in zip(self.reactions, k)
        )
        return ReactionNetwork(self.species, reactions)

    def subnetwork(self, reactions) -> "ReactionNetwork":
        """Same species, only the listed reaction indices."""
        return ReactionNetwork(self.species, tuple(self.reactions[j] for j in reactions))

    def sample_initial(self, rng: np.random.Generator, m: int) -> np.ndarray:
        """Draw ``m`` scaled initial states from the declared initial laws."""
        out = np.zeros((m, self.n_species))
        pending = []
        for s in self.species:
            law = s.initial
            if law.kind == "point":
                out[:, s.id] = law.value
            elif law.kind == "bernoulli":
                out[:, s.id] = rng.random(m) < law.value
            elif law.kind == "poisson":
                out[:, s.id] = rng.poisson(law.value, m)
            else:
                pending.append(s)
        for s in pending:
            out[:, s.id] = 1.0 - out[:, self.index(s.initial.ref)]
        return out


def _fraction(v, where: str) -> Fraction:
    if isinstance(v, bool):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    try:
        f = Fraction(v) if not isinstance(v, float) else Fraction(v).limit_denominator(10**6)
    except (ValueError, TypeError, ZeroDivisionError):
        raise ConfigError(f"{where}: expected an integer or rational, got {v!r}") from None
    return f


_TERM_RE = re.compile(r"^\s*(\d*)\s*([A-Za-z_][\w.]*)\s*$")


def _parse_side(text: str, index: dict, where: str) -> dict:
    text = text.strip()
    out: dict = {}
    if text in ("", "0", "∅", "None", "null"):
        return out
    for term in text.split("+"):
        m = _TERM_RE.match(term)
        if not m:
            raise ConfigError(f"{where}: cannot parse term {term.strip()!r}")
        coef, name = m.groups()
        out[name] = out.get(name, 0) + (int(coef) if coef else 1)
    return out


def _parse_compact(text: str, where: str) -> dict:
    """``"S1 -> S2, k=0.014, beta=0"`` into a reaction mapping."""
    parts = [p.strip() for p in text.split(",")]
    if "->" not in parts[0]:
        raise ConfigError(f"{where}: expected 'lhs -> rhs' in {text!r}")
    entry: dict = {"equation": parts[0]}
    for p in parts[1:]:
        if "=" not in p:
            raise ConfigError(f"{where}: expected key=value, got {p!r}")
        key, val = (s.strip() for s in p.split("=", 1))
        entry[key] = yaml.safe_load(val)
    return entry


def _stoich_vector(counts: dict, names: dict, n: int, where: str) -> tuple[int, ...]:
    vec = [0] * n
    if not isinstance(counts, dict):
        raise ConfigError(f"{where}: expected a mapping of species to coefficients")
    for name, c in counts.items():
        if name not in names:
            raise ConfigError(f"{where}: unknown species {name!r}")
        if isinstance(c, bool) or not isinstance(c, int):
            raise ConfigError(f"{where}: coefficient of {name!r} must be an integer")
        if c < 0:
            raise ConfigError(f"{where}: negative stoichiometry for {name!r}")
        if c > MAX_STOICH:
            raise ConfigError(f"{where}: coefficient {c} of {name!r} exceeds {MAX_STOICH}")
        vec[names[name]] += c
    return tuple(vec)


def network_from_dict(doc: dict) -> ReactionNetwork:
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a mapping")
    unknown = set(doc) - NETWORK_KEYS - EXTRA_SECTIONS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    raw_species = doc.get("species") or []
    raw_reactions = doc.get("reactions") or []
    if not raw_species:
        raise ConfigError("no species")
    if not raw_reactions:
        raise ConfigError("no reactions")

    species = []
    for i, s in enumerate(raw_species):
        where = f"species[{i}]"
        if isinstance(s, str):
            s = {"name": s}
        if not isinstance(s, dict):
            raise ConfigError(f"{where}: expected a mapping")
        bad = set(s) - SPECIES_KEYS
        if bad:
            raise ConfigError(f"{where}: unknown keys {sorted(bad)}")
        if "name" not in s:
            raise ConfigError(f"{where}: missing name")
        species.append(
            Species(
                id=i,
                name=str(s["name"]),
                alpha=_fraction(s.get("alpha", 0), where + ".alpha"),
                initial=_parse_initial(s.get("initial", "point(0)"), where + ".initial"),
            )
        )
    names = {s.name: s.id for s in species}
    for s in species:
        if s.initial.kind == "complement_of" and s.initial.ref not in names:
            raise ConfigError(f"species {s.name!r}: unknown species {s.initial.ref!r}")

    reactions = []
    n = len(species)
    for j, r in enumerate(raw_reactions):
        where = f"reactions[{j}]"
        if isinstance(r, str):
            r = _parse_compact(r, where)
        if not isinstance(r, dict):
            raise ConfigError(f"{where}: expected a mapping or 'lhs -> rhs, k=...' string")
        bad = set(r) - REACTION_KEYS
        if bad:
            raise ConfigError(f"{where}: unknown keys {sorted(bad)}")
        if "equation" in r:
            if "substrates" in r or "products" in r:
                raise ConfigError(f"{where}: give either equation or substrates/products")
            lhs, sep, rhs = str(r["equation"]).partition("->")
            if not sep:
                raise ConfigError(f"{where}: equation needs '->'")
            subs = _parse_side(lhs, names, where)
            prods = _parse_side(rhs, names, where)
        else:
            subs = r.get("substrates") or {}
            prods = r.get("products") or {}
        if "k" not in r:
            raise ConfigError(f"{where}: missing rate constant k")
        k = r["k"]
        if isinstance(k, bool) or not isinstance(k, (int, float)):
            raise ConfigError(f"{where}: rate constant must be a number")
        if not k > 0:
            raise ConfigError(f"{where}: rate constant must be positive, got {k}")
        reactions.append(
            Reaction(
                substrate=_stoich_vector(subs, names, n, where + ".substrates"),
                product=_stoich_vector(prods, names, n, where + ".products"),
                rate_constant=float(k),
                beta=_fraction(r.get("beta", 0), where + ".beta"),
                name=str(r.get("name", "")),
            )
        )
    return ReactionNetwork(tuple(species), tuple(reactions))


def load_yaml(text: str) -> dict:
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        pos = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"syntax error at {pos}: {exc.problem}") from None
    return doc if doc is not None else {}


def parse_network(text: str) -> ReactionNetwork:
    return network_from_dict(load_yaml(text))


def _exponent_out(f: Fraction):
    return f.numerator if f.denominator == 1 else f"{f.numerator}/{f.denominator}"


def network_to_dict(net: ReactionNetwork) -> dict:
    names = net.names

    def side(vec):
        return {names[i]: int(c) for i, c in enumerate(vec) if c}

    reactions = []
    for r in net.reactions:
        entry = {
            "substrates": side(r.substrate),
            "products": side(r.product),
            "k": r.rate_constant,
            "beta": _exponent_out(r.beta),
        }
        if r.name:
            entry["name"] = r.name
        reactions.append(entry)
    return {
        "species": [
            {"name": s.name, "alpha": _exponent_out(s.alpha), "initial": str(s.initial)}
            for s in net.species
        ],
        "reactions": reactions,
    }


def serialize_network(net: ReactionNetwork) -> str:
    return yaml.safe_dump(network_to_dict(net), sort_keys=False)


def falling_factorial(x: float, v: int) -> float:
    """x (x-1) ... (x-v+1), zero when x < v."""
    if x < v:
        return 0.0
    out = 1.0
    for ell in range(v):
        out *= x - ell
    return out


def _check_index(net: ReactionNetwork, j: int) -> Reaction:
    if not 0 <= j < net.n_reactions:
        raise IndexError(f"reaction index {j} out of range [0, {net.n_reactions})")
    return net.reactions[j]


def propensity(net: ReactionNetwork, j: int, x) -> float:
    """Mass-action propensity of reaction ``j`` at raw copy numbers ``x``."""
    r = _check_index(net, j)
    out = r.rate_constant
    for xi, v in zip(x, r.substrate):
        if v:
            out *= falling_factorial(xi, v)
    return out


def stoichiometry_change(net: ReactionNetwork, j: int) -> np.ndarray:
    r = _check_index(net, j)
    return np.subtract(r.product, r.substrate).astype(np.int64)
