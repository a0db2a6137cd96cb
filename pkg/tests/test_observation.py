import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from crnfilter.network import ConfigError
from crnfilter.observation import (
    Channel,
    ObservationModel,
    ObservationSequence,
    log_weight,
    observe,
    read_observations_csv,
    weight,
    write_observations_csv,
)

UNIT = ObservationModel((Channel(0, 1.0, 50.0, -50.0),))


def test_zero_noise_returns_h(gene):
    x = np.array([0.0, 1.0, 3.0, 0.42])
    assert observe(gene.observation, x, None).tolist() == [4.2]


def test_noise_is_standard_normal(gene):
    x = np.tile([0.0, 1.0, 3.0, 0.42], (20_000, 1))
    w = observe(gene.observation, x, np.random.default_rng(1))[:, 0] - 4.2
    assert stats.kstest(w, "norm").pvalue > 1e-3


def test_default_model_clamps_at_range(gene):
    obs = gene.observation
    assert obs.m == 1 and obs.sample_period == 2.0 and obs.h_bound == 1000.0
    # scaled units: 10 * x4 with x4 = raw / 100
    assert obs.h(np.array([0, 1, 0, 150.0]))[0] == 1000.0
    assert obs.h(np.array([0, 1, 0, 0.2]))[0] == pytest.approx(2.0)


def test_raw_unit_channel(gene):
    obs = ObservationModel.from_dict(
        {"channels": [{"species": "S4", "gain": 10, "upper": 1000, "units": "raw"}]},
        gene.net, 100.0,
    )
    # raw 150 and 20 copies are scaled 1.5 and 0.2
    assert obs.h(np.array([0, 1, 0, 1.5]))[0] == 1000.0
    assert obs.h(np.array([0, 1, 0, 0.2]))[0] == pytest.approx(200.0, rel=1e-14)


@pytest.mark.parametrize(
    "doc, msg",
    [
        ({"channels": [{"species": "S9", "upper": 1}]}, "unknown species"),
        ({"channels": [{"species": "S4", "upper": 1, "units": "kg"}]}, "units"),
        ({"channels": [{"species": "S4", "upper": 1, "offset": 2}]}, "unknown keys"),
        ({"channels": [{"species": "S4", "upper": 1}], "period": 3}, "unknown keys"),
    ],
)
def test_config_errors(gene, doc, msg):
    with pytest.raises(ConfigError, match=msg):
        ObservationModel.from_dict(doc, gene.net, 100.0)


def test_model_validation():
    with pytest.raises(ValueError):
        ObservationModel(())
    with pytest.raises(ValueError):
        Channel(0, 1.0, upper=1.0, lower=2.0)
    with pytest.raises(ValueError):
        Channel(0, 1.0, upper=math.inf)


def test_weight_examples():
    zero = ObservationModel((Channel(0, 0.0, 10.0),))
    for y in (-3.0, 0.0, 17.0):
        assert weight(zero, [5.0], [y]) == 1.0
    assert weight(UNIT, [2.0], [2.0]) == pytest.approx(math.exp(2), rel=1e-15)
    assert weight(UNIT, [2.0], [2.0]) == pytest.approx(7.389056, abs=1e-6)
    assert weight(UNIT, [2.0], [0.0]) == pytest.approx(math.exp(-2), rel=1e-15)


def test_weight_dimension_mismatch():
    with pytest.raises(ValueError):
        log_weight(UNIT, [1.0], [1.0, 2.0])


def test_likelihood_ratio_identity():
    rng = np.random.default_rng(7)
    two = ObservationModel((Channel(0, 1.0, 6.0, -6.0), Channel(1, 0.5, 6.0, -6.0)))
    x = rng.uniform(-10, 10, size=(1000, 2))
    y = rng.uniform(-8, 8, size=(1000, 2))
    g = weight(two, x, y)
    hx = two.h(x)
    ratio = np.prod(stats.norm.pdf(y - hx) / stats.norm.pdf(y), axis=1)
    np.testing.assert_allclose(g, ratio, rtol=1e-12)


def test_overflow_raises_but_log_weight_is_finite(gene):
    x = np.array([0, 1, 0, 500.0])
    with pytest.raises(FloatingPointError):
        weight(gene.observation, x, [1000.0])
    assert log_weight(gene.observation, x, [1000.0]) == pytest.approx(1000 * 1000 - 5e5)


@given(
    st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3),
)
def test_log_weight_bounded_by_clamp(x, y1, y2):
    model = ObservationModel((Channel(0, 3.0, 20.0, -5.0), Channel(0, -1.0, 7.0)))
    y = np.array([y1, y2])
    lw = log_weight(model, [x], y)
    B = model.h_bound
    assert abs(lw) <= model.m * (B * np.abs(y).max() + B * B / 2) + 1e-9


def test_sequence_validation():
    with pytest.raises(ValueError):
        ObservationSequence(np.array([2.0, 2.0]), np.zeros(2))
    with pytest.raises(ValueError):
        ObservationSequence(np.array([0.0, 2.0]), np.zeros(2))
    with pytest.raises(ValueError):
        ObservationSequence(np.array([2.0]), np.zeros(3))
    assert ObservationSequence(np.array([2.0, 4.0]), np.array([1.0, 2.0])).values.shape == (2, 1)


def test_csv_roundtrip(tmp_path):
    obs = ObservationSequence(np.array([2.0, 4.0, 6.0]), np.array([[0.1, 1e-17], [3.3, -2.0], [1000.0, 7.0]]))
    path = tmp_path / "obs.csv"
    write_observations_csv(obs, path)
    assert path.read_text().splitlines()[0] == "t,y1,y2"
    back = read_observations_csv(path)
    assert np.array_equal(back.times, obs.times) and np.array_equal(back.values, obs.values)
