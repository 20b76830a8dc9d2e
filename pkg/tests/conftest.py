import numpy as np
import pytest

from opra import LoggedDataset, fixture


@pytest.fixture
def e1():
    return fixture("e1")


@pytest.fixture
def e2():
    return fixture("e2")


@pytest.fixture
def e1_pair(e1):
    """The two-row E1 sample: action 0 with reward 0, action 1 with reward 1."""
    return LoggedDataset([[0.0], [0.0]], [0, 1], [0.0, 1.0], 1.0, 2)


def random_step_cdf(rng, D=1.0, max_atoms=8):
    from opra import StepCdf

    k = int(rng.integers(1, max_atoms + 1))
    locs = np.unique(np.round(rng.uniform(0, D, k), 3))
    masses = rng.dirichlet(np.ones(locs.shape[0]))
    values = np.cumsum(masses)
    values[-1] = 1.0
    grid = np.union1d(locs, [0.0, D])
    vals = np.array([values[np.searchsorted(locs, t, side="right") - 1] if t >= locs[0] else 0.0 for t in grid])
    vals[-1] = 1.0
    return StepCdf(grid, np.minimum(np.maximum.accumulate(vals), 1.0), D)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Criterion number -> (name, passed, detail), printed in the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, {})


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(ACCEPTANCE_KEY, None)
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(log):
        name, passed, detail = log[k]
        terminalreporter.write_line(f"criterion {k:2d} {'PASS' if passed else 'FAIL'}  {name}: {detail}")
