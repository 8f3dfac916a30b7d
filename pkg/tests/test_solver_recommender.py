import json

import pytest

from optiloop.exceptions import ProviderUnavailable
from optiloop.providers.llm import ScriptedLLM, UnconfiguredLLM
from optiloop.services.solver_recommender import (
    normalize_solver_name,
    parse_recommendations,
    recommend,
    recommendations_to_json,
)
from tests.conftest import read_fixture

ALL_SOLVERS = ["gurobipy", "cvxpy", "ortools", "pyomo", "scipy", "pyscipopt"]


def test_normalize_solver_name():
    assert normalize_solver_name("OR-Tools") == normalize_solver_name("ortools")
    assert normalize_solver_name("CVXPY") == "cvxpy"


def test_free_text_ranking():
    recommendations = parse_recommendations(read_fixture("food_recommendation.txt"), ALL_SOLVERS)
    assert [r.solver for r in recommendations] == ALL_SOLVERS
    assert [r.rank for r in recommendations] == [1, 2, 3, 4, 5, 6]
    first = recommendations[0]
    assert "Native linear-programming engine" in first.rationale
    assert first.setup_notes == "How to install:\npip install gurobipy"
    assert "How to install" not in recommendations[1].rationale
    assert recommendations[3].rationale.startswith("(Alternatives")


def test_unknown_solvers_are_dropped_and_reranked():
    recommendations = parse_recommendations(read_fixture("food_recommendation.txt"), ["scipy", "cvxpy"])
    assert [(r.solver, r.rank) for r in recommendations] == [("cvxpy", 1), ("scipy", 2)]


def test_nothing_available_falls_back_to_given_order():
    recommendations = parse_recommendations("1. gurobipy\nfast and simple", ["highs", "glpk"])
    assert [(r.solver, r.rank) for r in recommendations] == [("highs", 1), ("glpk", 2)]
    assert recommendations[0].rationale.startswith("fallback")


def test_json_ranking_orders_by_rank():
    text = json.dumps({"recommendations": [
        {"solver": "scipy", "rank": 2, "rationale": "bundled"},
        {"solver": "OR-Tools", "rank": 1, "rationale": "fast", "setup_notes": "pip install ortools"},
        {"solver": "cplex", "rank": 3},
        {"solver": "ortools", "rank": 4},
    ]})
    recommendations = parse_recommendations(text, ALL_SOLVERS)
    assert [(r.solver, r.rank) for r in recommendations] == [("ortools", 1), ("scipy", 2)]
    assert recommendations[0].setup_notes == "pip install ortools"


def test_recommend_asks_provider(food_process):
    llm = ScriptedLLM([{"kind": "recommend", "response": read_fixture("food_recommendation.txt")}])
    recommendations = recommend(food_process, ["ortools", "gurobipy"], llm)
    assert [r.solver for r in recommendations] == ["gurobipy", "ortools"]


def test_single_solver_skips_provider(food_process):
    recommendations = recommend(food_process, ["toy-bruteforce"], UnconfiguredLLM())
    assert [(r.solver, r.rank) for r in recommendations] == [("toy-bruteforce", 1)]


def test_provider_outage_propagates(food_process):
    with pytest.raises(ProviderUnavailable):
        recommend(food_process, ["ortools", "gurobipy"], UnconfiguredLLM())


def test_no_available_solver_is_an_error(food_process):
    with pytest.raises(ValueError):
        recommend(food_process, [], UnconfiguredLLM())


def test_recommendations_to_json(food_process):
    data = recommendations_to_json(recommend(food_process, ["scipy"], UnconfiguredLLM()))
    assert data == {"recommendations": [
        {"solver": "scipy", "rank": 1, "rationale": "only available solver", "setup_notes": ""}
    ]}


def test_unusable_json_ranks_keep_list_position():
    text = json.dumps({"recommendations": [
        {"solver": "b", "rank": "first"},
        {"solver": "a", "rank": 3},
        {"solver": "c", "rank": None},
    ]})
    recommendations = parse_recommendations(text, ["a", "b", "c"])
    assert [(r.solver, r.rank) for r in recommendations] == [("b", 1), ("a", 2), ("c", 3)]
