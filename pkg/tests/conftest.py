import numpy as np
import pytest

from geochart.synth import SceneConfig, synth_scene


@pytest.fixture(scope="session")
def small_scene():
    """A 120-point scene on the default L-shaped geometry."""
    return synth_scene(SceneConfig(num_points=120, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
