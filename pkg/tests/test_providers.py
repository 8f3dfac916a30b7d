import itertools
import json
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import pytest
from pydantic import ValidationError

from optiloop.exceptions import OptimizerError, ProviderError, ProviderUnavailable, RateLimited
from optiloop.models import SolverStatus, parse_decision_process
from optiloop.providers.base import LLMProvider, ProviderRequest, RequestKind, call_with_retries
from optiloop.providers.embeddings import HashEmbedder
from optiloop.providers.llm import GuardedLLM, HttpChatLLM, ScriptedLLM, UnconfiguredLLM
from optiloop.providers.optimizer_agent import AgentOptimizerDriver, extract_result_json
from optiloop.providers.replay import ProviderLog, ReplayLLM, read_log
from optiloop.providers.toy_solver import (
    Fault,
    FaultyOptimizerDriver,
    ToyOptimizerDriver,
    VariableDomain,
    faulty_optimize_variants,
    toy_optimize,
)
from tests.conftest import load_fixture


def _request(kind=RequestKind.EXTRACT, prompt="Extract the model", run_id="default"):
    return ProviderRequest(kind=kind, prompt=prompt, run_id=run_id)


class BlockingLLM(LLMProvider):
    """Holds every call until released, tracking how many overlap"""

    name = "blocking"

    def __init__(self):
        self.lock = threading.Lock()
        self.active = 0
        self.peak = 0
        self.saturated = threading.Event()
        self.release = threading.Event()

    def complete(self, request):
        with self.lock:
            self.active += 1
            self.peak = max(self.peak, self.active)
            if self.active >= 2:
                self.saturated.set()
        self.release.wait(timeout=5)
        with self.lock:
            self.active -= 1
        return "ok"


def _process(**changes):
    data = load_fixture("knapsack_extraction.json")
    data.update(changes)
    return parse_decision_process(json.dumps(data))


# retries

def test_retries_back_off_exponentially():
    outcomes = [RateLimited("busy"), RateLimited("busy"), "done"]
    delays = []

    def flaky():
        outcome = outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome

    assert call_with_retries(flaky, max_retries=2, backoff_seconds=0.5, sleep=delays.append) == "done"
    assert delays == [0.5, 1.0]


def test_retries_give_up():
    delays = []

    def always_busy():
        raise RateLimited("busy")

    with pytest.raises(RateLimited):
        call_with_retries(always_busy, max_retries=1, backoff_seconds=0.5, sleep=delays.append)
    assert delays == [0.5]


def test_unavailable_is_not_retried():
    calls = []

    def down():
        calls.append(1)
        raise ProviderUnavailable("down")

    with pytest.raises(ProviderUnavailable):
        call_with_retries(down, max_retries=3, backoff_seconds=0.0, sleep=lambda s: None)
    assert len(calls) == 1


def test_blank_prompt_is_rejected():
    with pytest.raises(ValidationError):
        ProviderRequest(kind=RequestKind.JUDGE, prompt="   ")


# scripted provider

def test_scripted_selection_order():
    request = _request(prompt="Extraction sample 2 of 5")
    llm = ScriptedLLM([
        {"kind": "extract", "response": "plain"},
        {"kind": "extract", "match": "sample 2 of", "response": "matched"},
        {"kind": "extract", "prompt_hash": request.prompt_hash, "response": "hashed"},
        {"kind": "judge", "response": "judge"},
    ])
    assert llm.complete(request) == "hashed"
    assert llm.complete(_request(prompt="Extraction sample 2 of 3")) == "matched"
    assert llm.complete(_request(prompt="Extraction sample 1 of 5")) == "plain"
    assert llm.complete(_request(kind=RequestKind.JUDGE)) == "judge"
    with pytest.raises(ProviderUnavailable):
        llm.complete(_request(kind=RequestKind.RECOMMEND))


def test_scripted_responses_from_files(tmp_path):
    (tmp_path / "answer.txt").write_text("from file", encoding="utf-8")
    script = tmp_path / "script.json"
    script.write_text(json.dumps({"responses": [
        {"kind": "extract", "response_file": "answer.txt"},
        {"kind": "judge", "response": {"best_candidate_id": 1}},
    ]}), encoding="utf-8")
    llm = ScriptedLLM.from_file(script)
    assert llm.complete(_request()) == "from file"
    assert json.loads(llm.complete(_request(kind=RequestKind.JUDGE))) == {"best_candidate_id": 1}


def test_scripted_outage_and_rate_limit():
    llm = ScriptedLLM([
        {"kind": "extract", "response": "ok", "failures": 1},
        {"kind": "judge", "unavailable": True},
    ])
    with pytest.raises(RateLimited):
        llm.complete(_request())
    assert llm.complete(_request()) == "ok"
    with pytest.raises(ProviderUnavailable):
        llm.complete(_request(kind=RequestKind.JUDGE))


def test_unconfigured_provider():
    with pytest.raises(ProviderUnavailable):
        UnconfiguredLLM().complete(_request())


def test_guarded_provider_retries_and_logs(tmp_path):
    delays = []
    log = ProviderLog(tmp_path / "provider_log.jsonl")
    llm = GuardedLLM(
        ScriptedLLM([{"kind": "extract", "response": "ok", "failures": 2}]),
        max_retries=2,
        backoff_seconds=0.5,
        log=log,
        sleep=delays.append,
    )
    assert llm.complete(_request(run_id="run-1")) == "ok"
    assert delays == [0.5, 1.0]
    log.flush()
    entries = read_log(tmp_path / "provider_log.jsonl")
    assert len(entries) == 1
    assert entries[0]["run_id"] == "run-1"
    assert entries[0]["response"] == "ok"


# provider log and replay

def test_log_is_sorted_independent_of_order(tmp_path):
    requests_ = [
        _request(kind=RequestKind.JUDGE, prompt="pick one"),
        _request(prompt="sample 1"),
        _request(prompt="sample 2"),
    ]
    forward = ProviderLog(tmp_path / "a.jsonl")
    backward = ProviderLog(tmp_path / "b.jsonl")
    for request in requests_:
        forward.record(request, request.prompt.upper())
    for request in reversed(requests_):
        backward.record(request, request.prompt.upper())
    forward.flush()
    backward.flush()
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert [e["kind"] for e in forward.entries()] == ["extract", "extract", "judge"]
    assert len(ProviderLog(tmp_path / "a.jsonl")) == 3


def test_replay_answers_recorded_requests(tmp_path):
    log = ProviderLog(tmp_path / "log.jsonl")
    log.record(_request(prompt="sample 1"), "first")
    log.flush()
    replay = ReplayLLM.from_log(tmp_path / "log.jsonl")
    assert replay.complete(_request(prompt="sample 1")) == "first"
    with pytest.raises(ProviderUnavailable):
        replay.complete(_request(prompt="sample 2"))
    with pytest.raises(ProviderUnavailable):
        ReplayLLM.from_log(tmp_path / "missing.jsonl")


# http provider

class FakeResponse:
    def __init__(self, status_code, payload=None):
        self.status_code = status_code
        self._payload = payload or {}

    def json(self):
        return self._payload


def test_http_provider_requires_credentials():
    with pytest.raises(ProviderUnavailable):
        HttpChatLLM("https://llm.invalid/v1/chat/completions", "model", None).complete(_request())


def test_http_provider_maps_status_codes(monkeypatch):
    sent = []
    responses = [
        FakeResponse(429),
        FakeResponse(503),
        FakeResponse(200, {"choices": [{"message": {"content": "answer"}}]}),
    ]

    def fake_post(url, headers, json, timeout):
        sent.append(json)
        return responses.pop(0)

    monkeypatch.setattr("optiloop.providers.llm.requests.post", fake_post)
    llm = HttpChatLLM("https://llm.invalid/v1/chat/completions", "model", "key")
    with pytest.raises(RateLimited):
        llm.complete(_request())
    with pytest.raises(ProviderUnavailable):
        llm.complete(_request())
    assert llm.complete(_request()) == "answer"
    assert sent[-1]["model"] == "model"
    assert sent[-1]["messages"][1]["content"] == "Extract the model"
    assert sent[-1]["stream"] is False


# embeddings

def test_hash_embedder_is_deterministic():
    first = HashEmbedder(dimension=16, seed=3)
    second = HashEmbedder(dimension=16, seed=3)
    text = "minimize transportation cost"
    assert first.embed([text]) == second.embed([text])
    assert len(first.embed([text])[0]) == 16
    assert first.identifier == "hash-16-seed3"
    assert HashEmbedder(dimension=16, seed=4).embed([text]) != first.embed([text])


def test_hash_embedder_rejects_empty_batch():
    with pytest.raises(ProviderError):
        HashEmbedder().embed([])
    with pytest.raises(ValueError):
        HashEmbedder(dimension=0)


# toy optimizer

def test_knapsack_optimum(knapsack_process, knapsack_domain):
    run = toy_optimize(knapsack_process, knapsack_domain)
    assert run.status == SolverStatus.OPTIMAL
    assert run.objective_value == 9.0
    assert run.variables == {"a": 3.0, "b": 0.0}
    assert run.iterations == 16
    assert run.solve_time == pytest.approx(16e-6)


def test_knapsack_with_tighter_bound(knapsack_process):
    run = toy_optimize(knapsack_process, VariableDomain(bounds={"a": (0, 2), "b": (0, 3)}))
    assert run.objective_value == 8.0
    assert run.variables == {"a": 0.0, "b": 2.0}


def test_infeasible_grid(knapsack_process, knapsack_domain):
    process = _process(constraints=[
        {"expression": "2*a + 3*b <= capacity", "description": "weight limit"},
        {"expression": "a + b >= 7", "description": "impossible demand"},
    ])
    run = toy_optimize(process, knapsack_domain)
    assert run.status == SolverStatus.INFEASIBLE
    assert run.objective_value is None
    silent = toy_optimize(process, knapsack_domain, report_status=False)
    assert silent.status == SolverStatus.ERROR


def test_fixed_variables_do_not_count_toward_cap(knapsack_process):
    domain = VariableDomain(bounds={"a": (1, 1), "b": (0, 3)})
    run = toy_optimize(knapsack_process, domain, variable_cap=1)
    assert run.status == SolverStatus.OPTIMAL
    assert run.variables == {"a": 1.0, "b": 1.0}


def test_too_many_free_variables():
    process = parse_decision_process(json.dumps({
        "problem_description": "Choose three of thirty projects.",
        "decision_variables": [{"name": "y[i]", "type": "BINARY", "description": "project i chosen"}],
        "inputs": [{"name": "w", "value": list(range(1, 31)), "units": "", "description": "project value"}],
        "exogenous_variables": [],
        "exogenous_uncertainties": [],
        "state_variables": [],
        "transition_function": "",
        "objective_function": {"direction": "maximize", "expression": "sum(w[i] * y[i] for i in items)", "description": ""},
        "constraints": [{"expression": "sum(y[i] for i in items) <= 3", "description": "at most three"}],
    }))
    run = toy_optimize(process, VariableDomain())
    assert run.status == SolverStatus.ERROR
    assert "exceed the cap of 12" in run.message


def test_missing_bounds_are_an_error(knapsack_process):
    run = toy_optimize(knapsack_process, VariableDomain(bounds={"a": (0, 3)}))
    assert run.status == SolverStatus.ERROR
    assert "'b'" in run.message


def test_continuous_variables_are_refused():
    process = _process(decision_variables=[
        {"name": "a", "type": "CONTINUOUS", "description": ""},
        {"name": "b", "type": "INTEGER", "description": ""},
    ])
    run = toy_optimize(process, VariableDomain(default_bounds=(0, 3)))
    assert run.status == SolverStatus.ERROR
    assert "continuous" in run.message


def test_toy_optimizer_matches_enumeration():
    rng = random.Random(5)
    for _ in range(50):
        values = [rng.randint(1, 9) for _ in range(3)]
        weights = [rng.randint(1, 5) for _ in range(3)]
        capacity = rng.randint(0, 12)
        process = parse_decision_process(json.dumps({
            "problem_description": "random knapsack",
            "decision_variables": [{"name": n, "type": "INTEGER", "description": ""} for n in "abc"],
            "inputs": [{"name": "capacity", "value": capacity, "units": "", "description": ""}],
            "exogenous_variables": [],
            "exogenous_uncertainties": [],
            "state_variables": [],
            "transition_function": "",
            "objective_function": {
                "direction": "maximize",
                "expression": f"{values[0]}*a + {values[1]}*b + {values[2]}*c",
                "description": "",
            },
            "constraints": [{
                "expression": f"{weights[0]}*a + {weights[1]}*b + {weights[2]}*c <= capacity",
                "description": "",
            }],
        }))
        expected = max(
            sum(v * x for v, x in zip(values, point))
            for point in itertools.product(range(4), repeat=3)
            if sum(w * x for w, x in zip(weights, point)) <= capacity
        )
        run = toy_optimize(process, VariableDomain(default_bounds=(0, 3)))
        assert run.objective_value == expected


# fault injection

def test_fault_variants_are_named_in_order(knapsack_process, knapsack_domain):
    drivers = faulty_optimize_variants(
        ToyOptimizerDriver(knapsack_domain),
        [{"kind": "none"}, {"kind": "perturb-objective", "epsilon": 1.0}, Fault(kind="flip-objective-sign")],
    )
    runs = [driver.run(knapsack_process) for driver in drivers]
    assert [r.variant_name for r in runs] == ["variant_1", "variant_2", "variant_3"]
    assert [r.objective_value for r in runs] == [9.0, 10.0, 0.0]


def test_fault_heals_only_when_reported(knapsack_process, knapsack_domain):
    driver = FaultyOptimizerDriver(ToyOptimizerDriver(knapsack_domain), Fault(kind="drop-constraint", index=0))
    assert driver.run(knapsack_process).objective_value == 21.0
    assert driver.run(knapsack_process, "something unrelated").objective_value == 21.0
    assert driver.run(knapsack_process, "- constraint 0 (weight limit): lhs 15.0 <= rhs 6.0").objective_value == 9.0
    assert driver.healed


def test_report_status_fault(knapsack_process, knapsack_domain):
    driver = FaultyOptimizerDriver(
        ToyOptimizerDriver(knapsack_domain),
        Fault(kind="report-status", status=SolverStatus.TIME_LIMIT, heals=False),
    )
    run = driver.run(knapsack_process, "consensus status time_limit")
    assert run.status == SolverStatus.TIME_LIMIT
    assert not driver.healed


# agent optimizer

RESULT = {
    "optimal_variables": {"a": 3, "b": 0},
    "optimal_objective_value": 9,
    "status": "Optimal",
    "solver_info": {"solver_name": "OR-Tools (CP-SAT)", "solve_time": 0.01, "iterations": 4, "gap": 0.0},
}


def test_extract_result_json():
    assert extract_result_json(json.dumps(RESULT)) == RESULT
    fenced = "Here is the result:\n```json\n" + json.dumps(RESULT) + "\n```\nDone."
    assert extract_result_json(fenced) == RESULT
    with pytest.raises(OptimizerError):
        extract_result_json("no json here")
    with pytest.raises(OptimizerError):
        extract_result_json("[1, 2]")


def test_agent_driver_uses_feedback(knapsack_process):
    corrected = {**RESULT, "optimal_objective_value": 9.0, "solver_info": {"solver_name": "Gurobi"}}
    llm = ScriptedLLM([
        {"kind": "generate_optimizer", "match": "failed validation", "response": corrected},
        {"kind": "generate_optimizer", "response": "```json\n" + json.dumps(RESULT) + "\n```"},
    ])
    driver = AgentOptimizerDriver(llm, ["ortools", "gurobipy"], name="variant_2")
    run = driver.run(knapsack_process)
    assert run.variant_name == "variant_2"
    assert run.status == SolverStatus.OPTIMAL
    assert run.variables == {"a": 3.0, "b": 0.0}
    assert run.solver_name == "OR-Tools (CP-SAT)"
    assert driver.run(knapsack_process, "objective mismatch").solver_name == "Gurobi"


def test_agent_driver_rejects_bad_output(knapsack_process):
    driver = AgentOptimizerDriver(ScriptedLLM([{"kind": "generate_optimizer", "response": "it crashed"}]), ["scipy"])
    with pytest.raises(OptimizerError):
        driver.run(knapsack_process)
    claims = {**RESULT, "optimal_objective_value": None}
    driver = AgentOptimizerDriver(ScriptedLLM([{"kind": "generate_optimizer", "response": claims}]), ["scipy"])
    run = driver.run(knapsack_process)
    assert run.status == SolverStatus.ERROR
    assert run.message == "optimal status without objective value"


def test_in_flight_limit_caps_concurrent_calls():
    inner = BlockingLLM()
    llm = GuardedLLM(inner, max_in_flight=2)
    with ThreadPoolExecutor(max_workers=6) as executor:
        futures = [executor.submit(llm.complete, _request(prompt=f"sample {i}")) for i in range(6)]
        assert inner.saturated.wait(timeout=5)
        time.sleep(0.05)
        assert inner.peak == 2
        inner.release.set()
        assert [f.result(timeout=5) for f in futures] == ["ok"] * 6
    assert inner.peak == 2
