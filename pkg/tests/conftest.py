import numpy as np
import pytest

from adagoal.mdp import TabularMdp


def random_kernel(rng, S, A, sparsity=0.5):
    """Random kernel with some zero entries; every row keeps at least one successor."""
    P = rng.random((S, A, S))
    P[rng.random((S, A, S)) < sparsity] = 0.0
    empty = P.sum(axis=2) == 0
    P[empty, 0] = 1.0
    rows, cols = np.nonzero(empty)
    P[rows, cols, rng.integers(S, size=len(rows))] = 1.0
    return P / P.sum(axis=2, keepdims=True)


def random_mdp(rng, S, A, reset=True, sparsity=0.5):
    """Random MDP; with ``reset`` the last action returns to s0 = 0."""
    P = random_kernel(rng, S, A, sparsity)
    if reset:
        P[:, A - 1] = 0.0
        P[:, A - 1, 0] = 1.0
    return TabularMdp(P, s0=0, reset_action=A - 1 if reset else None)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
