import json
from pathlib import Path

import pytest

from optiloop.config import settings
from optiloop.models import parse_decision_process
from optiloop.providers.toy_solver import VariableDomain

FIXTURES = Path(__file__).parent / "fixtures"


def read_fixture(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


def load_fixture(name: str):
    return json.loads(read_fixture(name))


@pytest.fixture(autouse=True)
def no_backoff(monkeypatch):
    monkeypatch.setattr(settings, "PROVIDER_BACKOFF_SECONDS", 0.0)


@pytest.fixture
def food_process():
    return parse_decision_process(read_fixture("food_extraction.json"))


@pytest.fixture
def food_domain():
    return VariableDomain.from_file(FIXTURES / "food_domain.json")


@pytest.fixture
def knapsack_process():
    return parse_decision_process(read_fixture("knapsack_extraction.json"))


@pytest.fixture
def knapsack_domain():
    return VariableDomain.from_file(FIXTURES / "knapsack_domain.json")
