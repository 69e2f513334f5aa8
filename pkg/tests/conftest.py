import numpy as np
import pytest

from snapvote.trainer import Snapshot, SnapshotStore


def random_stochastic(rng, n, K):
    m = rng.random((n, K)) + 1e-3
    return m / m.sum(axis=1, keepdims=True)


def random_store(rng, epochs, n_train, n_test, K, layers=(), width=4):
    """Store of random snapshots; layer reps are loosely tied to labels."""
    store = SnapshotStore("test", "0")
    for e in epochs:
        reps = {name: (rng.normal(size=(n_train, width)), rng.normal(size=(n_test, width)))
                for name in layers}
        store.add(Snapshot(e, random_stochastic(rng, n_train, K),
                           random_stochastic(rng, 3, K),
                           random_stochastic(rng, n_test, K), float(rng.random()), reps))
    return store


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
