"""Shared fixtures: the 10,000-transition batch, its world model and the test states.

The model takes about half a minute to train, so it is built once per session.
"""
import numpy as np
import pytest

from cpbrl.dynamics import gen_batch, load_states
from cpbrl.surrogate import fit

BATCH_SEED = 42

# One PASS/FAIL line per acceptance criterion, printed after the run.
VERDICTS = []


@pytest.fixture(scope="session")
def batch():
    return gen_batch(10_000, seed=BATCH_SEED)


@pytest.fixture(scope="session")
def holdout():
    return gen_batch(2_000, seed=BATCH_SEED + 1)


@pytest.fixture(scope="session")
def model(batch):
    return fit(batch)


@pytest.fixture(scope="session")
def states():
    return load_states()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def verdict():
    def record(criterion, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}"
        VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
