import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from horomix.config import ExperimentConfig
from horomix.lattice import HaarSampler, default_lattice, sample_haar
from horomix.observables import default_bumps
from horomix.timechange import FlowClock

settings.register_profile("horomix", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("horomix")

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def lattice():
    return default_lattice()


@pytest.fixture(scope="session")
def cfg():
    return ExperimentConfig.default()


@pytest.fixture(scope="session")
def unit_clock():
    return FlowClock()


@pytest.fixture(scope="session")
def tau_clock(cfg):
    return cfg.clock()


@pytest.fixture(scope="session")
def bumps():
    return default_bumps()


@pytest.fixture(scope="session")
def points(lattice):
    return sample_haar(200, HaarSampler(5), lattice)


def random_sl2(rng, scale=1.0):
    a, b, c = rng.normal(scale=scale, size=3)
    a = a if abs(a) > 0.1 else 0.1 + abs(a)
    return np.array([[a, b], [c, (1.0 + b * c) / a]])
