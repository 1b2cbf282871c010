from __future__ import annotations

from pathlib import Path

import pytest

from kgreason.backend import InMemoryBackend
from kgreason.graph import load_tsv
from kgreason.selector import OracleSelector, Question, load_oracle_plans

FIXTURES = Path(__file__).parent / "fixtures"

Q1_TEXT = "How many years did the second oldest dog in the world live?"
Q2_TEXT = "What is the ruling party of the government now in South Korea?"


@pytest.fixture
def toy_graph():
    return load_tsv(FIXTURES / "toy-dogs.tsv")


@pytest.fixture
def toy_backend(toy_graph):
    return InMemoryBackend(toy_graph)


@pytest.fixture
def toy_plans():
    return load_oracle_plans(FIXTURES / "toy-plans.json")


@pytest.fixture
def oracle(toy_plans):
    return OracleSelector(toy_plans)


@pytest.fixture
def q1():
    return Question("q1", Q1_TEXT, ("29",))


@pytest.fixture
def q2():
    return Question("q2", Q2_TEXT, ("People Power Party",))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
