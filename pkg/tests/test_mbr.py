import json

import pytest
from pydantic import ValidationError

from optiloop.exceptions import MissingEmbedding, WeightMismatch
from optiloop.models import parse_decision_process
from optiloop.providers.embeddings import HashEmbedder
from optiloop.providers.llm import ScriptedLLM, UnconfiguredLLM
from optiloop.services.mbr_select import (
    COMPONENT_TYPES,
    ExtractionCandidate,
    MbrConfig,
    build_candidates,
    candidate_utility,
    component_texts,
    component_utility,
    consistency_metrics,
    judge_rerank,
    mbr_scores_report,
    pairwise_statistics,
    select_top_q,
    utilities,
)
from tests.conftest import load_fixture, read_fixture

VERDICT = {
    "disagreement_analysis": "candidates differ on the balance constraint",
    "best_candidate_id": 3,
    "confidence": "medium",
    "reasoning": "inequality leaves room for surplus",
}


@pytest.fixture
def food_candidates():
    inequality = parse_decision_process(read_fixture("food_extraction.json"))
    equality = parse_decision_process(read_fixture("food_extraction_equality.json"))
    processes = [equality, inequality, inequality, equality, inequality]
    return build_candidates(processes, HashEmbedder(dimension=64))


def _scaled(candidate: ExtractionCandidate, factor: float) -> ExtractionCandidate:
    return candidate.model_copy(update={
        "component_embeddings": {
            k: tuple(factor * v for v in vector) for k, vector in candidate.component_embeddings.items()
        }
    })


def test_component_texts_cover_weighted_components(food_process):
    texts = component_texts(food_process)
    assert set(texts) == set(COMPONENT_TYPES)
    assert json.loads(texts["objective"])["direction"] == "minimize"
    assert json.loads(texts["constraints"])[1]["description"] == "non-negativity of shipped quantities"


def test_build_candidates_assigns_ids(food_candidates, food_process):
    assert [c.id for c in food_candidates] == [1, 2, 3, 4, 5]
    explicit = build_candidates([food_process, food_process], HashEmbedder(dimension=8), ids=[2, 5])
    assert [c.id for c in explicit] == [2, 5]
    with pytest.raises(ValueError):
        build_candidates([food_process], HashEmbedder(dimension=8), ids=[1, 2])


def test_majority_formulation_ranks_first(food_candidates):
    top = select_top_q(food_candidates, MbrConfig())
    assert [c.id for c in top] == [2, 3, 5]


def test_utilities_are_bounded(food_candidates):
    for value in utilities(food_candidates, MbrConfig()).values():
        assert -1.0 - 1e-12 <= value <= 1.0 + 1e-12


def test_identical_candidates_have_unit_utility(food_process):
    candidates = build_candidates([food_process] * 3, HashEmbedder(dimension=16))
    for candidate in candidates:
        assert candidate_utility(candidates, candidate.id, MbrConfig(num_candidates=3)) == pytest.approx(1.0)


def test_top_q_is_a_prefix_of_top_q_plus_one(food_candidates):
    rankings = [
        [c.id for c in select_top_q(food_candidates, MbrConfig(num_candidates=5, top_q=q))]
        for q in range(1, 6)
    ]
    for shorter, longer in zip(rankings, rankings[1:]):
        assert longer[:len(shorter)] == shorter


def test_utilities_ignore_embedding_scale(food_candidates):
    scaled = [_scaled(c, 3.7) for c in food_candidates]
    original = utilities(food_candidates, MbrConfig())
    rescaled = utilities(scaled, MbrConfig())
    for cid, value in original.items():
        assert rescaled[cid] == pytest.approx(value, abs=1e-12)


def test_weight_mismatch(food_candidates):
    cfg = MbrConfig(weights={"constraints": 0.5, "objective": 0.5})
    with pytest.raises(WeightMismatch):
        candidate_utility(food_candidates, 1, cfg)


@pytest.mark.parametrize("kwargs", [
    {"weights": {"constraints": 0.5, "decision_variables": 0.2, "objective": 0.1, "inputs": 0.1}},
    {"weights": {"constraints": 1.2, "decision_variables": -0.2, "objective": 0.0, "inputs": 0.0}},
    {"num_candidates": 3, "top_q": 4},
    {"num_candidates": 1, "top_q": 1},
])
def test_invalid_mbr_config(kwargs):
    with pytest.raises(ValidationError):
        MbrConfig(**kwargs)


def test_missing_embedding(food_candidates):
    broken = food_candidates[0].model_copy(update={"component_embeddings": {}})
    with pytest.raises(MissingEmbedding):
        component_utility([broken, *food_candidates[1:]], 1, "constraints")


def test_utility_needs_two_candidates(food_candidates):
    with pytest.raises(ValueError):
        component_utility(food_candidates[:1], 1, "constraints")


def test_scores_report(food_candidates):
    report = mbr_scores_report(food_candidates, MbrConfig())
    assert report["total_candidates"] == 5
    assert report["filtering_logic"] == "Select Top-3 based on embedding consensus score"
    statuses = {entry["id"]: entry["status"] for entry in report["scores"]}
    assert statuses == {
        1: "FILTERED (Score too low)",
        2: "PASSED",
        3: "PASSED",
        4: "FILTERED (Score too low)",
        5: "PASSED",
    }


def test_consistency_metrics(food_candidates, food_process):
    identical = build_candidates([food_process] * 4, HashEmbedder(dimension=16))
    consistency, stability = consistency_metrics(identical)
    assert consistency == pytest.approx(1.0)
    assert stability == pytest.approx(0.0, abs=1e-9)
    consistency, stability = consistency_metrics(food_candidates)
    assert consistency < 1.0
    assert stability > 0.0


def test_pairwise_statistics():
    assert pairwise_statistics([0.5, 1.0]) == (0.75, 0.25)
    with pytest.raises(ValueError):
        pairwise_statistics([])


def test_judge_picks_candidate(food_candidates):
    top = select_top_q(food_candidates, MbrConfig())
    judge = ScriptedLLM([{"kind": "judge", "response": VERDICT}])
    chosen, verdict = judge_rerank(top, "problem", judge)
    assert chosen.id == 3
    assert verdict.confidence == "medium"
    assert not verdict.fallback


def test_judge_verdict_fixture_selects_candidate_five(food_candidates):
    top = select_top_q(food_candidates, MbrConfig())
    judge = ScriptedLLM([{"kind": "judge", "response": load_fixture("food_judge_verdict.json")}])
    chosen, verdict = judge_rerank(top, read_fixture("food_problem.txt"), judge)
    assert chosen.id == 5
    assert verdict.confidence == "high"


def test_judge_outside_top_q_falls_back(food_candidates):
    top = select_top_q(food_candidates, MbrConfig())
    judge = ScriptedLLM([{"kind": "judge", "response": {**VERDICT, "best_candidate_id": 4}}])
    chosen, verdict = judge_rerank(top, "problem", judge)
    assert chosen.id == top[0].id
    assert verdict.fallback
    assert verdict.confidence == "low"
    assert verdict.to_dict()["fallback"] is True


def test_malformed_verdict_is_retried_once(food_candidates):
    top = select_top_q(food_candidates, MbrConfig())
    judge = ScriptedLLM([
        {"kind": "judge", "match": "previous answer was not valid JSON", "response": VERDICT},
        {"kind": "judge", "response": "I think candidate 3 is best."},
    ])
    chosen, verdict = judge_rerank(top, "problem", judge)
    assert chosen.id == 3
    assert not verdict.fallback


def test_malformed_verdict_twice_falls_back(food_candidates):
    top = select_top_q(food_candidates, MbrConfig())
    judge = ScriptedLLM([{"kind": "judge", "response": {"best_candidate_id": 3}}])
    chosen, verdict = judge_rerank(top, "problem", judge)
    assert chosen.id == top[0].id
    assert verdict.fallback


def test_unavailable_judge_falls_back(food_candidates):
    top = select_top_q(food_candidates, MbrConfig())
    chosen, verdict = judge_rerank(top, "problem", UnconfiguredLLM())
    assert chosen.id == 2
    assert verdict.fallback


def test_single_candidate_skips_judge(food_candidates):
    chosen, verdict = judge_rerank(food_candidates[:1], "problem", UnconfiguredLLM())
    assert chosen.id == 1
    assert verdict.confidence == "high"
    assert not verdict.fallback
