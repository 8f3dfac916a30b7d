"""
Benchmark scoring with the relative-error criterion, the verified
infeasibility exception and suite reports.
"""

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from optiloop.exceptions import EmptySuite, SchemaViolation
from optiloop.models import SolverStatus

logger = logging.getLogger(__name__)

INFEASIBLE = "Infeasible"
DEFAULT_EPSILON = 1e-8
DEFAULT_THRESHOLD = 1e-6


class BenchmarkInstance(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str = Field(min_length=1)
    description: str
    ground_truth_objective: Union[float, Literal["Infeasible"]]
    tags: Tuple[str, ...] = ()
    extraction: Optional[Dict[str, Any]] = None
    domain: Optional[Dict[str, Any]] = None

    @field_validator("ground_truth_objective", mode="before")
    @classmethod
    def _infeasible_marker(cls, value: Any) -> Any:
        if isinstance(value, str) and value.strip().lower() == "infeasible":
            return INFEASIBLE
        return value

    @property
    def expects_infeasible(self) -> bool:
        return self.ground_truth_objective == INFEASIBLE


class PipelineOutput(BaseModel):
    """What the harness needs to know about one pipeline run"""
    model_config = ConfigDict(frozen=True)

    status: SolverStatus
    objective: Optional[float] = None
    validation_passed: bool = False
    gate_passed: bool = False
    has_integer_variables: bool = False
    infeasibility_evidence: bool = False


class ScoreRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    instance_id: str
    predicted: Union[float, str, None]
    correct: bool
    relative_error: Optional[float] = None
    exception_rule: Literal["none", "verified_infeasibility"] = "none"
    review_flags: List[str] = Field(default_factory=list)
    error: Optional[str] = None

    @model_validator(mode="after")
    def _justified(self) -> "ScoreRecord":
        if self.correct and self.exception_rule == "none":
            if self.relative_error is None or not self.relative_error < DEFAULT_THRESHOLD:
                raise ValueError("a correct record needs relative_error < 1e-6 or an exception rule")
        return self


def score(
    predicted: float,
    gt: float,
    epsilon: float = DEFAULT_EPSILON,
    threshold: float = DEFAULT_THRESHOLD,
) -> Tuple[bool, float]:
    """|predicted - gt| / (|gt| + epsilon) < threshold, strictly"""
    if not (math.isfinite(predicted) and math.isfinite(gt)):
        raise ValueError("score needs finite objectives")
    relative_error = abs(predicted - gt) / (abs(gt) + epsilon)
    return relative_error < threshold, relative_error


def _near_power_of_ten(predicted: float, gt: float) -> bool:
    if predicted == 0 or gt == 0:
        return False
    exponent = math.log10(abs(predicted / gt))
    nearest = round(exponent)
    return nearest != 0 and abs(exponent - nearest) < 1e-9


def review_flags(predicted: float, gt: float, output: PipelineOutput) -> List[str]:
    """Manual-review candidates; never turn an incorrect score into a correct one"""
    flags = []
    if _near_power_of_ten(predicted, gt):
        flags.append("units")
    if output.has_integer_variables:
        flags.append("relaxation-mismatch")
    return flags


def score_with_exceptions(result: PipelineOutput, instance: BenchmarkInstance) -> ScoreRecord:
    if instance.expects_infeasible:
        if result.status == SolverStatus.INFEASIBLE and result.infeasibility_evidence:
            return ScoreRecord(
                instance_id=instance.id,
                predicted=result.status.value,
                correct=True,
                exception_rule="verified_infeasibility",
            )
        predicted = result.objective if result.objective is not None else result.status.value
        return ScoreRecord(instance_id=instance.id, predicted=predicted, correct=False)

    if not result.status.has_solution or result.objective is None:
        return ScoreRecord(instance_id=instance.id, predicted=result.status.value, correct=False)

    gt = float(instance.ground_truth_objective)
    correct, relative_error = score(result.objective, gt)
    flags = [] if correct else review_flags(result.objective, gt, result)
    return ScoreRecord(
        instance_id=instance.id,
        predicted=result.objective,
        correct=correct,
        relative_error=relative_error,
        review_flags=flags,
    )


class SuiteReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    records: List[ScoreRecord]
    num_instances: int
    num_correct: int
    accuracy: float
    accuracy_fraction: str
    seconds: Dict[str, float] = Field(default_factory=dict)

    @property
    def timing(self) -> Dict[str, float]:
        values = list(self.seconds.values())
        if not values:
            return {"total": 0.0, "mean": 0.0, "max": 0.0}
        return {"total": sum(values), "mean": sum(values) / len(values), "max": max(values)}

    def to_json(self, include_timing: bool = True) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "num_instances": self.num_instances,
            "num_correct": self.num_correct,
            "accuracy": self.accuracy,
            "accuracy_fraction": self.accuracy_fraction,
            "records": [r.model_dump() for r in self.records],
        }
        if include_timing:
            data["timing"] = self.timing
        return data

    def summary_table(self) -> str:
        header = f"{'instance':<24} {'predicted':>16} {'rel_error':>12} {'correct':>8}  notes"
        rows = [header, "-" * len(header)]
        for record in self.records:
            predicted = f"{record.predicted:.6g}" if isinstance(record.predicted, float) else str(record.predicted)
            error = "" if record.relative_error is None else f"{record.relative_error:.3e}"
            notes = []
            if record.exception_rule != "none":
                notes.append(record.exception_rule)
            if record.review_flags:
                notes.append("review: " + ",".join(record.review_flags))
            if record.error:
                notes.append("error: " + record.error)
            rows.append(f"{record.instance_id:<24} {predicted:>16} {error:>12} {str(record.correct):>8}  {'; '.join(notes)}")
        rows.append("-" * len(header))
        rows.append(f"accuracy {self.accuracy_fraction} = {self.accuracy:.4f}")
        return "\n".join(rows)


Pipeline = Callable[[BenchmarkInstance], PipelineOutput]


def run_suite(
    instances: Sequence[BenchmarkInstance],
    pipeline: Pipeline,
    parallelism: int = 5,
    clock: Callable[[], float] = time.perf_counter,
) -> SuiteReport:
    """
    Score every instance; a crashing instance is recorded as incorrect with
    its error instead of aborting the suite. Records are ordered by id.

    Raises:
        EmptySuite: no instances
    """
    if not instances:
        raise EmptySuite("the benchmark suite has no instances")
    ids = [instance.id for instance in instances]
    if len(set(ids)) != len(ids):
        raise SchemaViolation("id", "instance ids must be unique within a suite")

    def run_one(instance: BenchmarkInstance) -> Tuple[ScoreRecord, float]:
        start = clock()
        try:
            record = score_with_exceptions(pipeline(instance), instance)
        except Exception as e:
            logger.error(f"Instance {instance.id} failed: {e}")
            record = ScoreRecord(instance_id=instance.id, predicted=None, correct=False, error=f"{type(e).__name__}: {e}")
        return record, clock() - start

    records: Dict[str, ScoreRecord] = {}
    seconds: Dict[str, float] = {}
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as executor:
        futures = {executor.submit(run_one, instance): instance.id for instance in instances}
        for future in as_completed(futures):
            record, elapsed = future.result()
            records[futures[future]] = record
            seconds[futures[future]] = elapsed

    # Completion order varies with parallelism; report by id
    ordered = [records[i] for i in sorted(records)]
    correct = sum(1 for r in ordered if r.correct)
    logger.info(f"Suite finished: {correct}/{len(ordered)} correct")
    return SuiteReport(
        records=ordered,
        num_instances=len(ordered),
        num_correct=correct,
        accuracy=correct / len(ordered),
        accuracy_fraction=f"{correct}/{len(ordered)}",
        seconds={i: seconds[i] for i in sorted(seconds)},
    )


def load_suite(path: Union[str, Path]) -> List[BenchmarkInstance]:
    """JSON-lines file of benchmark instances"""
    instances = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                instances.append(BenchmarkInstance.model_validate(json.loads(line)))
    return instances
