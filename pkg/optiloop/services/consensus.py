"""
Self-consistency aggregation of optimizer variant runs: status vote,
tolerance clustering of objectives, median selection and runtime tie-break.
"""

import logging
from collections import Counter
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field

from optiloop.models import Direction, SolverRun, SolverStatus
from optiloop.models.solver_run import STATUS_PRIORITY

logger = logging.getLogger(__name__)


class ConsensusConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_variants: int = Field(default=3, ge=1)
    rtol: float = Field(default=1e-6, ge=0.0)
    atol: float = Field(default=1e-9, ge=0.0)


class ConsensusResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    variables: Dict[str, float]
    objective_value: Optional[float]
    status: SolverStatus
    num_variants: int
    num_successful: int
    num_failed: int
    status_distribution: Dict[str, int]
    solver_agreement: int
    objective_agreement: int
    objective_agreement_ratio: float
    num_unique_objectives: int
    failed_variants: List[str]
    solvers_used: List[str]
    consensus_solvers: List[str]
    selected_variant: Optional[str]
    variant_results: List[Dict[str, object]]

    def to_ensemble_json(self) -> Dict[str, object]:
        return {
            "optimal_variables": dict(self.variables),
            "optimal_objective_value": self.objective_value,
            "status": self.status.value,
            "solver_info": {
                "ensemble_size": self.num_variants,
                "solvers_used": list(self.solvers_used),
                "consensus_solvers": list(self.consensus_solvers),
            },
            "consensus_info": {
                "num_variants": self.num_variants,
                "num_successful": self.num_successful,
                "num_failed": self.num_failed,
                "status_distribution": dict(self.status_distribution),
                "solver_agreement": self.solver_agreement,
                "objective_agreement": self.objective_agreement,
                "objective_agreement_ratio": self.objective_agreement_ratio,
                "num_unique_objectives": self.num_unique_objectives,
                "failed_variants": list(self.failed_variants),
            },
            "variant_results": [dict(r) for r in self.variant_results],
        }


def objective_similar(a: float, b: float, cfg: ConsensusConfig) -> bool:
    """|a - b| <= atol + rtol * |b|, with b as the reference"""
    return abs(a - b) <= cfg.atol + cfg.rtol * abs(b)


def symmetric_similar(a: float, b: float, cfg: ConsensusConfig) -> bool:
    return objective_similar(a, b, cfg) or objective_similar(b, a, cfg)


def status_consensus(runs: Sequence[SolverRun]) -> SolverStatus:
    """Most frequent status; ties go to the higher-priority status"""
    if not runs:
        raise ValueError("status consensus needs at least one run")
    counts = Counter(run.status for run in runs)
    return max(counts, key=lambda status: (counts[status], status.rank))


Member = Tuple[str, float]


def cluster_objectives(values: Sequence[Member], cfg: ConsensusConfig) -> List[List[Member]]:
    """
    Sort ascending and sweep once: a value joins the current cluster when it
    is similar to that cluster's largest member, otherwise it opens a new one.
    """
    ordered = sorted(values, key=lambda member: (member[1], member[0]))
    clusters: List[List[Member]] = []
    for member in ordered:
        if clusters and symmetric_similar(member[1], clusters[-1][-1][1], cfg):
            clusters[-1].append(member)
        else:
            clusters.append([member])
    return clusters


def lower_median(values: Sequence[float]) -> float:
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def _complete_runs(runs: Sequence[SolverRun], expected: int) -> List[SolverRun]:
    present = {run.variant_name for run in runs}
    completed = list(runs)
    for i in range(1, expected + 1):
        if len(completed) >= expected:
            break
        name = f"variant_{i}"
        if name not in present:
            completed.append(SolverRun.failed(name, "variant produced no result"))
            present.add(name)
    return completed


def consensus(
    runs: Sequence[SolverRun],
    cfg: ConsensusConfig,
    direction: Direction = Direction.MINIMIZE,
) -> ConsensusResult:
    """
    Aggregate variant runs.

    Missing variants (fewer runs than ``cfg.num_variants``) count as errors.
    When the consensus status carries a solution, the objective is the lower
    median of the largest cluster and the variables come verbatim from the
    fastest run achieving it.
    """
    # Fill missing variants as errors and fix the order
    completed = _complete_runs(runs, cfg.num_variants)
    ordered = sorted(completed, key=lambda run: run.variant_name)
    if not ordered:
        ordered = [SolverRun.failed("variant_1", "no runs")]

    # First vote on status, then cluster objectives among the agreeing runs
    status = status_consensus(ordered)
    counts = Counter(run.status for run in ordered)
    failed = [run.variant_name for run in ordered if run.status == SolverStatus.ERROR]
    agreeing = [run for run in ordered if run.status == status]

    variables: Dict[str, float] = {}
    objective: Optional[float] = None
    agreement = 0
    ratio = 0.0
    unique = 0
    consensus_solvers: List[str] = []
    selected: Optional[str] = None

    # time_limit runs may stop without an incumbent
    members = [(run.variant_name, run.objective_value) for run in agreeing if run.objective_value is not None]
    if status.has_solution and not members:
        logger.warning(f"Consensus status {status.value} but no agreeing run reported an objective")
    elif status.has_solution:
        clusters = cluster_objectives(members, cfg)
        maximize = direction == Direction.MAXIMIZE

        def preference(cluster: List[Member]) -> Tuple[int, float]:
            median = lower_median([value for _, value in cluster])
            return len(cluster), (median if maximize else -median)

        # Largest cluster wins; direction breaks size ties
        largest = max(clusters, key=preference)
        objective = lower_median([value for _, value in largest])
        names = {name for name, _ in largest}
        achieving = [run for run in agreeing if run.variant_name in names and run.objective_value == objective]
        winner = min(achieving, key=lambda run: (run.solve_time, run.variant_name))
        variables = dict(winner.variables)
        selected = winner.variant_name
        agreement = len(largest)
        ratio = agreement / len(agreeing)
        unique = len(clusters)
        consensus_solvers = [run.solver_name for run in agreeing if run.variant_name in names]
    else:
        logger.warning(f"Consensus status {status.value}; no solution to aggregate")

    return ConsensusResult(
        variables=variables,
        objective_value=objective,
        status=status,
        num_variants=len(ordered),
        num_successful=len(ordered) - len(failed),
        num_failed=len(failed),
        status_distribution={s.value: counts[s] for s in STATUS_PRIORITY if counts[s]},
        solver_agreement=len(agreeing),
        objective_agreement=agreement,
        objective_agreement_ratio=ratio,
        num_unique_objectives=unique,
        failed_variants=failed,
        solvers_used=[run.solver_name for run in ordered],
        consensus_solvers=consensus_solvers,
        selected_variant=selected,
        variant_results=[run.summary() for run in ordered],
    )
