import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", derandomize=True, deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_bases(rng, L):
    return "".join(rng.choice(list("AUCG"), size=L))


def random_valid_pairs(rng, seq, tries=None):
    """A random matching on mask-allowed cells (may cross)."""
    from unrollfold.core import build_constraint_mask

    M = build_constraint_mask(seq)
    L = len(seq)
    free = np.ones(L, dtype=bool)
    pairs = set()
    cells = np.argwhere(np.triu(M, k=1) > 0)
    rng.shuffle(cells)
    budget = len(cells) if tries is None else tries
    for i, j in cells[:budget]:
        if free[i] and free[j] and rng.random() < 0.5:
            pairs.add((int(i), int(j)))
            free[i] = free[j] = False
    return frozenset(pairs)


# one line per acceptance criterion, echoed in the terminal summary
GATE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if GATE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in GATE_LINES:
            terminalreporter.write_line(line)
