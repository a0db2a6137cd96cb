import numpy as np
import pytest

from crnfilter.experiment import load_model, packaged_model
from crnfilter.network import parse_network
from crnfilter.scaling import ScalingSpec, reduce

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def gene():
    return load_model()


@pytest.fixture(scope="session")
def gene_mrna():
    return load_model(packaged_model("gene_mrna"))


@pytest.fixture(scope="session")
def gene_reduced(gene):
    return reduce(gene.net, gene.spec)


def make(text, N=100.0):
    net = parse_network(text)
    return net, ScalingSpec.from_network(net, N)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
