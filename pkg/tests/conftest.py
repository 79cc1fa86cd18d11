import numpy as np
import pytest

from cliip.graph import ContactGraph, EpochGraph


def random_dag(rng, n, p, epoch=0):
    """Edges follow a random topological order, so the result is acyclic."""
    perm = rng.permutation(n)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    src, dst = perm[iu[keep]], perm[ju[keep]]
    m = len(src)
    return EpochGraph(epoch, n, src, dst, rng.uniform(1, 600, m), rng.uniform(0, 10, m))


def random_graph(rng, n, p):
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    m = int(keep.sum())
    return ContactGraph(n, iu[keep], ju[keep], rng.uniform(1, 600, m), rng.uniform(0, 10, m))


def random_states(rng, n):
    return rng.integers(0, 7, size=n).astype(np.int8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, printed once at the end of the session
VERDICTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance")
    for key in sorted(VERDICTS):
        ok, detail = VERDICTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
