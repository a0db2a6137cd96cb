import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crnfilter.network import (
    ConfigError,
    parse_network,
    propensity,
    serialize_network,
    stoichiometry_change,
)

TWO = """
species: [{name: S1}, {name: S2}]
reactions:
  - "S1 -> S2, k=0.014"
"""


def test_parse_compact_reaction():
    net = parse_network(TWO)
    assert net.n_species == 2 and net.n_reactions == 1
    r = net.reactions[0]
    assert r.substrate == (1, 0)
    assert r.product == (0, 1)
    assert r.rate_constant == 0.014


def test_parse_mapping_and_equation_forms_agree():
    a = parse_network("""
species: [{name: A}, {name: B}]
reactions:
  - {substrates: {A: 2}, products: {B: 1}, k: 3.0, beta: 1/2}
""")
    b = parse_network("""
species: [{name: A}, {name: B}]
reactions:
  - {equation: "2 A -> B", k: 3.0, beta: "1/2"}
""")
    assert a == b
    assert a.reactions[0].beta == Fraction(1, 2)


def test_declaration_order_is_index_order():
    net = parse_network("""
species: [{name: Z}, {name: A}, {name: M}]
reactions: ["A -> Z, k=1", "M -> 0, k=2"]
""")
    assert net.names == ["Z", "A", "M"]
    assert stoichiometry_change(net, 0).tolist() == [1, -1, 0]
    assert stoichiometry_change(net, 1).tolist() == [0, 0, -1]


def test_no_reactions():
    with pytest.raises(ConfigError, match="no reactions"):
        parse_network("species: [{name: S1}]\nreactions: []\n")


def test_unknown_species_is_named():
    with pytest.raises(ConfigError, match="S9"):
        parse_network("species: [{name: S1}]\nreactions: ['S9 -> S1, k=1']\n")


def test_syntax_error_reports_position():
    with pytest.raises(ConfigError, match=r"line \d+, column \d+"):
        parse_network("species: [{name: S1}\nreactions: x\n")


@pytest.mark.parametrize(
    "reaction, msg",
    [
        ("{substrates: {S1: -1}, products: {}, k: 1}", "negative stoichiometry"),
        ("{substrates: {S1: 1}, products: {}, k: -1}", "positive"),
        ("{substrates: {S1: 1}, products: {}, k: 0}", "positive"),
        ("{substrates: {S1: 5}, products: {}, k: 1}", "exceeds"),
        ("{substrates: {S1: 1}, products: {}, k: 1, rate: 2}", "unknown keys"),
    ],
)
def test_rejects_bad_reactions(reaction, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_network(f"species: [{{name: S1}}]\nreactions:\n  - {reaction}\n")


def test_rejects_unknown_species_key():
    with pytest.raises(ConfigError, match="unknown keys"):
        parse_network("species: [{name: S1, colour: red}]\nreactions: ['S1 -> 0, k=1']\n")


def test_unknown_complement_reference():
    with pytest.raises(ConfigError, match="S7"):
        parse_network(
            "species: [{name: S1, initial: 'complement_of(S7)'}]\nreactions: ['S1 -> 0, k=1']\n"
        )


def test_propensity_examples(gene):
    assert propensity(gene.net, 0, [1, 0, 0, 0]) == pytest.approx(0.014, rel=1e-15)
    dimer = parse_network("species: [{name: S}]\nreactions: ['2 S -> 0, k=1']\n")
    assert propensity(dimer, 0, [3]) == 6.0
    assert propensity(dimer, 0, [1]) == 0.0
    assert propensity(dimer, 0, [0]) == 0.0


def test_propensity_index_out_of_range(gene):
    with pytest.raises(IndexError):
        propensity(gene.net, 6, [0, 0, 0, 0])
    with pytest.raises(IndexError):
        stoichiometry_change(gene.net, -1)


def test_gene_model_change_vectors(gene):
    assert stoichiometry_change(gene.net, 0).tolist() == [-1, 1, 0, 0]
    assert stoichiometry_change(gene.net, 2).tolist() == [0, 0, 1, 0]
    ident = parse_network("species: [{name: S}]\nreactions: ['S -> S, k=1']\n")
    assert stoichiometry_change(ident, 0).tolist() == [0]


def test_propensity_matches_factorial_ratio_on_grid():
    net = parse_network("""
species: [{name: A}, {name: B}]
reactions:
  - "0 -> A, k=0.5"
  - "A -> B, k=1.5"
  - "2 A -> B, k=2.0"
  - "A + B -> 0, k=0.25"
  - "2 A + 2 B -> A, k=0.125"
""")
    for j, r in enumerate(net.reactions):
        for a in range(11):
            for b in range(11):
                expected = r.rate_constant
                for x, v in zip((a, b), r.substrate):
                    expected *= math.factorial(x) / math.factorial(x - v) if x >= v else 0
                assert propensity(net, j, [a, b]) == pytest.approx(expected, rel=1e-14, abs=0)


@given(st.integers(0, 4), st.integers(0, 60), st.integers(0, 60))
def test_propensity_nonnegative_and_monotone(v, x, y):
    net = parse_network(f"species: [{{name: S}}]\nreactions: ['{v} S -> 0, k=0.7']\n")
    lo, hi = sorted((x, y))
    p_lo, p_hi = propensity(net, 0, [lo]), propensity(net, 0, [hi])
    assert p_lo >= 0 and p_hi >= 0
    if lo >= v:
        assert p_hi >= p_lo


def test_roundtrip_gene_model(gene):
    text = serialize_network(gene.net)
    assert parse_network(text) == gene.net
    assert serialize_network(parse_network(text)) == text


@st.composite
def networks(draw):
    n = draw(st.integers(1, 4))
    names = [f"X{i}" for i in range(n)]
    laws = st.sampled_from(["point(0.0)", "poisson(2.5)", "bernoulli(0.25)", "point(3.0)"])
    species = [
        {"name": nm, "alpha": draw(st.sampled_from([0, 1, "1/2", "2/3"])), "initial": draw(laws)}
        for nm in names
    ]
    reactions = []
    for _ in range(draw(st.integers(1, 5))):
        side = st.dictionaries(st.sampled_from(names), st.integers(1, 4), max_size=n)
        reactions.append({
            "substrates": draw(side),
            "products": draw(side),
            "k": draw(st.floats(1e-6, 1e6, allow_nan=False)),
            "beta": draw(st.sampled_from([0, 1, -1, "3/2"])),
        })
    return {"species": species, "reactions": reactions}


@settings(max_examples=50, deadline=None)
@given(networks())
def test_roundtrip_property(doc):
    import yaml

    net = parse_network(yaml.safe_dump(doc))
    again = parse_network(serialize_network(net))
    assert again == net


def test_sample_initial_complement_pair(gene):
    x = gene.net.sample_initial(np.random.default_rng(0), 20000)
    assert np.all(x[:, 0] + x[:, 1] == 1)
    assert set(np.unique(x[:, 0])) <= {0.0, 1.0}
    se = math.sqrt((1 / 3) * (2 / 3) / len(x))
    assert abs(x[:, 0].mean() - 1 / 3) < 4 * se
    assert abs(x[:, 2].mean() - 2.0) < 4 * math.sqrt(2.0 / len(x))
