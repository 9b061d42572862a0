import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("msre", deadline=None, max_examples=30, derandomize=True)
settings.load_profile("msre")


@pytest.fixture
def gen():
    """Independent numpy generator for building test inputs."""
    return np.random.default_rng(20240611)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request, capsys):
    """Print an acceptance line now and repeat it in the terminal summary."""

    def emit(line):
        request.config.stash.setdefault(_ACCEPTANCE, []).append(line)
        with capsys.disabled():
            print("\n" + line)

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
