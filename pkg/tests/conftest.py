import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pathlab.path_space import Path, TimeGrid

settings.register_profile("pathlab", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pathlab")

DT = 1 / 256


@pytest.fixture
def ramp():
    g = TimeGrid.from_dt(-1.0, DT, 3 * 256)
    return Path(g, g.times())


@pytest.fixture
def brownian_path():
    gen = np.random.default_rng(7)
    g = TimeGrid.from_dt(0.0, DT, 256)
    return Path(g, np.concatenate([[0.0], np.cumsum(gen.normal(size=256) * np.sqrt(DT))]))


@pytest.fixture
def zero_path():
    return Path.constant(0.0, TimeGrid.from_dt(0.0, DT, 256))


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Collects one status line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def log(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)

    return log


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
