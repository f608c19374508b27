from __future__ import annotations

import numpy as np
import pytest

from pgser.core import TabularEnv
from pgser.dataset import generate_dataset
from pgser.grid import build_env, four_rooms_spec, islands_spec, open_spec
from pgser.oracle import build_oracle


def chain_env(h_max: int = 4) -> TabularEnv:
    """A -> B -> C chain plus an isolated D.

    Action 0 moves forward (C absorbs), action 1 stays put. From A the goal C
    is two steps away and D can never be reached.
    """
    nxt = np.array([[1, 0], [2, 1], [2, 2], [3, 3]])
    return TabularEnv(nxt, np.arange(4), num_goals=4, h_max=h_max, name="chain")


@pytest.fixture(scope="session")
def open5():
    return build_env(open_spec(5, 5), h_max=20)


@pytest.fixture(scope="session")
def rooms():
    return build_env(four_rooms_spec(), h_max=50)


@pytest.fixture(scope="session")
def islands():
    return build_env(islands_spec(9, 9), h_max=30)


@pytest.fixture(scope="session")
def open5_oracle(open5):
    return build_oracle(open5)


@pytest.fixture(scope="session")
def rooms_oracle(rooms):
    return build_oracle(rooms)


@pytest.fixture(scope="session")
def rooms_data(rooms):
    return generate_dataset(rooms, n_expert=20, n_random=80, noise=0.1, seed=7)


@pytest.fixture(scope="session")
def open5_data(open5):
    return generate_dataset(open5, n_expert=10, n_random=30, noise=0.1, seed=3)


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
