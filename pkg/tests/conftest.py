import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spice.scm import benchmark_spec, sample_dataset, standardize
from spice.spicenet import build_generator, fixed_head, train_generator

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def trained_a():
    """A generator fitted with the default budget on benchmark A (seed 0)."""
    spec = benchmark_spec("A")
    data = standardize(sample_dataset(spec, 2000, 0))
    gen = build_generator(1, fixed_head(spec.mechanism, data.standardization), seed=0)
    train_generator(gen, data)
    return spec, data, gen


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(LINES):
            terminalreporter.write_line(LINES[key])
