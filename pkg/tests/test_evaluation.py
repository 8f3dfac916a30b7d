import math

import pytest
from pydantic import ValidationError

from optiloop.config import RunConfig
from optiloop.exceptions import EmptySuite, SchemaViolation
from optiloop.models import SolverStatus
from optiloop.services.evaluation import (
    BenchmarkInstance,
    PipelineOutput,
    ScoreRecord,
    load_suite,
    review_flags,
    run_suite,
    score,
    score_with_exceptions,
)
from optiloop.services.pipeline import offline_instance_runner
from tests.conftest import FIXTURES


def _instance(gt, id="i1"):
    return BenchmarkInstance(id=id, description="d", ground_truth_objective=gt)


def _output(status=SolverStatus.OPTIMAL, objective=None, **kw):
    return PipelineOutput(status=status, objective=objective, **kw)


@pytest.mark.parametrize("predicted, gt, correct", [
    (100.0, 100.0, True),
    (100.00009, 100.0, True),
    (100.0002, 100.0, False),
    (0.0, 0.0, True),
    (1e-15, 0.0, True),
    (1e-13, 0.0, False),
    (1e-6, 0.0, False),
    (-5.0, 5.0, False),
])
def test_score_threshold(predicted, gt, correct):
    assert score(predicted, gt)[0] is correct


def test_score_threshold_is_strict():
    correct, relative_error = score(1e-6, 0.0, epsilon=1.0)
    assert relative_error == 1e-6
    assert not correct


def test_score_rejects_non_finite():
    with pytest.raises(ValueError):
        score(math.nan, 1.0)
    with pytest.raises(ValueError):
        score(1.0, math.inf)


def test_infeasible_ground_truth_marker():
    assert _instance("infeasible").expects_infeasible
    assert _instance("Infeasible").ground_truth_objective == "Infeasible"
    assert not _instance(3).expects_infeasible
    with pytest.raises(ValidationError):
        _instance("unknown")


def test_verified_infeasibility_exception():
    instance = _instance("Infeasible")
    record = score_with_exceptions(_output(SolverStatus.INFEASIBLE, infeasibility_evidence=True), instance)
    assert record.correct
    assert record.exception_rule == "verified_infeasibility"
    assert record.predicted == "infeasible"

    unverified = score_with_exceptions(_output(SolverStatus.INFEASIBLE), instance)
    assert not unverified.correct


def test_solution_against_infeasible_ground_truth():
    record = score_with_exceptions(_output(objective=9.0), _instance("Infeasible"))
    assert not record.correct
    assert record.predicted == 9.0


def test_missing_solution_is_incorrect():
    record = score_with_exceptions(_output(SolverStatus.ERROR), _instance(5.0))
    assert not record.correct
    assert record.predicted == "error"
    assert record.relative_error is None


def test_review_flags_never_change_correctness():
    output = _output(objective=8.0, has_integer_variables=True)
    record = score_with_exceptions(output, _instance(800.0))
    assert not record.correct
    assert record.review_flags == ["units", "relaxation-mismatch"]
    assert review_flags(8.0, 9.0, _output(objective=8.0)) == []
    assert review_flags(0.0, 10.0, _output(objective=0.0)) == []


def test_correct_record_needs_justification():
    with pytest.raises(ValidationError):
        ScoreRecord(instance_id="i1", predicted=10.0, correct=True, relative_error=0.1)
    with pytest.raises(ValidationError):
        ScoreRecord(instance_id="i1", predicted=10.0, correct=True)
    assert ScoreRecord(instance_id="i1", predicted="infeasible", correct=True, exception_rule="verified_infeasibility")


def test_run_suite_validates_instances():
    with pytest.raises(EmptySuite):
        run_suite([], lambda instance: _output(objective=1.0))
    with pytest.raises(SchemaViolation):
        run_suite([_instance(1.0), _instance(2.0)], lambda instance: _output(objective=1.0))


def test_crashing_instance_is_recorded():
    def pipeline(instance):
        if instance.id == "b":
            raise RuntimeError("optimizer exploded")
        return _output(objective=1.0)

    report = run_suite([_instance(1.0, id="b"), _instance(1.0, id="a")], pipeline, parallelism=2)
    assert [r.instance_id for r in report.records] == ["a", "b"]
    assert report.records[1].error == "RuntimeError: optimizer exploded"
    assert report.accuracy_fraction == "1/2"
    assert report.accuracy == 0.5


def test_timing_uses_clock():
    ticks = iter(range(100))
    report = run_suite([_instance(1.0)], lambda instance: _output(objective=1.0), parallelism=1,
                       clock=lambda: float(next(ticks)))
    assert report.seconds == {"i1": 1.0}
    assert report.timing == {"total": 1.0, "mean": 1.0, "max": 1.0}
    assert "timing" not in report.to_json(include_timing=False)


def test_toy_suite_end_to_end(tmp_path):
    instances = load_suite(FIXTURES / "toy_suite.jsonl")
    assert len(instances) == 10
    report = run_suite(instances, offline_instance_runner(RunConfig(), tmp_path))
    assert report.accuracy_fraction == "6/10"
    assert report.accuracy == pytest.approx(0.6)

    records = {r.instance_id: r for r in report.records}
    assert records["t01-knapsack"].predicted == 9.0
    assert records["t02-knapsack-tight"].predicted == 8.0
    assert records["t03-infeasible"].exception_rule == "verified_infeasibility"
    assert records["t04-wrong-ground-truth"].relative_error == pytest.approx(0.1)
    assert not records["t04-wrong-ground-truth"].correct
    assert records["t07-supplier-selection"].correct
    assert records["t08-units-mismatch"].review_flags == ["units", "relaxation-mismatch"]
    assert records["t09-expected-infeasible"].predicted == 9.0
    assert records["t10-unexpected-infeasible"].predicted == "infeasible"
    assert all(r.error is None for r in report.records)

    table = report.summary_table()
    assert table.splitlines()[-1] == "accuracy 6/10 = 0.6000"
    assert (tmp_path / "t01-knapsack" / "bundle.json").exists()
