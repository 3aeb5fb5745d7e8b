import numpy as np
import pytest

from gmcexp.estimators import RunConfig, make_ladder
from gmcexp.theory import ModelParams


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_cfg():
    """Cheap d=1 config: three rungs, 200 replicas."""

    def make(beta2=0.4, q=2.0, replicas=200, seed=7, **kw):
        ladder = make_ladder([2.0**-3, 2.0**-4, 2.0**-5])
        return RunConfig(ModelParams(beta2, q, 1), ladder, replicas, master_seed=seed, **kw)

    return make


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""

    def record(label, passed, detail):
        line = f"{label}: {'PASS' if passed else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line, flush=True)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
