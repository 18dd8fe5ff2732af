from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cheapstack.asymptotics import build_expansion  # noqa: E402
from cheapstack.exact_solver import solve  # noqa: E402
from cheapstack.model import supply_chain_game, transform_game  # noqa: E402


@pytest.fixture(scope="session")
def sc_game():
    return supply_chain_game()


@pytest.fixture(scope="session")
def sc_tg(sc_game):
    return transform_game(sc_game)


@pytest.fixture(scope="session")
def sc_expansion(sc_tg):
    return build_expansion(sc_tg)


@pytest.fixture(scope="session")
def sc_solutions(sc_tg):
    cache = {}

    def get(eps):
        if eps not in cache:
            cache[eps] = solve(sc_tg, eps)
        return cache[eps]

    return get


@pytest.fixture(scope="session")
def tv_game():
    from games import random_game

    return random_game(1, n=3, r=2, s=1, degree=1)


@pytest.fixture(scope="session")
def tv_tg(tv_game):
    return transform_game(tv_game)


@pytest.fixture(scope="session")
def tv_expansion(tv_tg):
    return build_expansion(tv_tg)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(LINES):
            terminalreporter.write_line(LINES[k])
