import numpy as np
import pytest

from activeris.scenario import ChannelRealization, ScenarioConfig, sample_channels, trial_rng


def random_channel(rng, K, Q, scale=1.0):
    def cn(shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    return ChannelRealization(cn((K, K)), scale * cn((Q, K)), scale * cn((Q, K)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_config():
    return ScenarioConfig()


@pytest.fixture(scope="session")
def default_channel(default_config):
    return sample_channels(default_config, trial_rng(7, 0))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
