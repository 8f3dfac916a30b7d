"""
Brute-force integer optimizer used as the offline optimizer backend, plus
fault-injecting variants for exercising consensus and validation.
"""

import dataclasses
import itertools
import json
import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from optiloop.exceptions import CapExceeded, EvaluationError
from optiloop.expressions import collect_variable_keys, eval_arith, is_satisfied
from optiloop.models import DecisionProcess, Direction, SolverRun, SolverStatus, VarType, canonical_variable_key
from optiloop.models.decision_process import ObjectiveSpec
from optiloop.models.environment import process_environment, variable_sort_key
from optiloop.providers.base import OptimizerDriver

logger = logging.getLogger(__name__)

TOY_SOLVER_NAME = "toy-bruteforce"
SECONDS_PER_POINT = 1e-6


class VariableDomain(BaseModel):
    """Integer bounds per instantiated variable, read from a sidecar domain file"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    bounds: Dict[str, Tuple[int, int]] = Field(default_factory=dict)
    default_bounds: Optional[Tuple[int, int]] = None
    index_sets: Dict[str, List[int]] = Field(default_factory=dict)

    @field_validator("bounds")
    @classmethod
    def _canonical(cls, bounds: Dict[str, Tuple[int, int]]) -> Dict[str, Tuple[int, int]]:
        return {canonical_variable_key(k): v for k, v in bounds.items()}

    @model_validator(mode="after")
    def _ordered(self) -> "VariableDomain":
        pairs = list(self.bounds.items())
        if self.default_bounds is not None:
            pairs.append(("default_bounds", self.default_bounds))
        for name, (lower, upper) in pairs:
            if lower > upper:
                raise ValueError(f"{name}: lower bound {lower} exceeds upper bound {upper}")
        return self

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "VariableDomain":
        with open(path, "r", encoding="utf-8") as f:
            return cls.model_validate(json.load(f))

    def bounds_for(self, key: str, var_type: VarType) -> Tuple[int, int]:
        if key in self.bounds:
            return self.bounds[key]
        if self.default_bounds is not None:
            return self.default_bounds
        if var_type == VarType.BINARY:
            return 0, 1
        raise CapExceeded(f"no finite bounds declared for '{key}'")


def _instantiated_keys(process: DecisionProcess, env) -> List[str]:
    keys = set(collect_variable_keys(process.objective_function.tree, env))
    for constraint in process.constraints:
        keys |= collect_variable_keys(constraint.tree, env)
    return sorted(keys, key=variable_sort_key)


def toy_optimize(
    process: DecisionProcess,
    domain: VariableDomain,
    report_status: bool = True,
    variable_cap: int = 12,
    grid_cap: int = 10 ** 7,
    variant_name: str = "variant_1",
) -> SolverRun:
    """
    Enumerate the integer grid and return the best feasible point.

    Only variables whose bounds leave a choice count toward ``variable_cap``;
    variables with equal bounds are fixed. Ties keep the first optimum met in
    lexicographic order of the sorted variable keys.

    Args:
        process: Model to solve
        domain: Bounds and index sets
        report_status: When False, an empty feasible grid is reported as an
            error instead of proven infeasibility
        variable_cap: Maximum number of free variables
        grid_cap: Maximum number of grid points

    Returns:
        SolverRun with status optimal, infeasible or error
    """
    def failed(message: str) -> SolverRun:
        logger.warning(f"{variant_name}: {message}")
        return SolverRun.failed(variant_name, message, solver_name=TOY_SOLVER_NAME)

    continuous = [v.name for v in process.decision_variables if v.var_type == VarType.CONTINUOUS]
    if continuous:
        return failed(f"continuous variables are not supported: {', '.join(continuous)}")

    types = {v.base_name: v.var_type for v in process.decision_variables}
    try:
        env = process_environment(process, {}, domain.index_sets)
        keys = _instantiated_keys(process, env)
        bounds = [domain.bounds_for(key, types.get(key.split("[", 1)[0], VarType.INTEGER)) for key in keys]
    except (CapExceeded, EvaluationError) as e:
        return failed(str(e))

    # Fixed variables are set once; only free ones span the grid
    assignment: Dict[str, float] = {}
    free_keys: List[str] = []
    ranges: List[range] = []
    grid = 1
    for key, (lower, upper) in zip(keys, bounds):
        if lower == upper:
            assignment[key] = float(lower)
        else:
            free_keys.append(key)
            ranges.append(range(lower, upper + 1))
            grid *= upper - lower + 1
    if len(free_keys) > variable_cap:
        return failed(str(CapExceeded(f"{len(free_keys)} free variables exceed the cap of {variable_cap}")))
    if grid > grid_cap:
        return failed(str(CapExceeded(f"grid of {grid} points exceeds the cap of {grid_cap}")))

    env = dataclasses.replace(env, assignment=assignment)
    objective = process.objective_function.tree
    constraints = process.constraint_trees()
    minimize = process.direction == Direction.MINIMIZE

    # Exhaustive search over the free variables
    best_value: Optional[float] = None
    best_point: Dict[str, float] = {}
    points = 0
    try:
        for values in itertools.product(*ranges):
            points += 1
            assignment.update(zip(free_keys, (float(v) for v in values)))
            if not all(is_satisfied(c, env) for c in constraints):
                continue
            value = eval_arith(objective, env)
            if best_value is None or (value < best_value if minimize else value > best_value):
                best_value = value
                best_point = dict(assignment)
    except EvaluationError as e:
        return failed(f"evaluation failed: {e}")

    solve_time = round(points * SECONDS_PER_POINT, 9)
    if best_value is None:
        if not report_status:
            return failed("no feasible point found")
        return SolverRun(
            variant_name=variant_name,
            status=SolverStatus.INFEASIBLE,
            solver_name=TOY_SOLVER_NAME,
            solve_time=solve_time,
            iterations=points,
        )
    return SolverRun(
        variant_name=variant_name,
        variables={key: best_point[key] for key in keys},
        objective_value=best_value,
        status=SolverStatus.OPTIMAL,
        solver_name=TOY_SOLVER_NAME,
        solve_time=solve_time,
        iterations=points,
        gap=0.0,
    )


class ToyOptimizerDriver(OptimizerDriver):
    def __init__(
        self,
        domain: VariableDomain,
        name: str = "variant_1",
        solver_name: str = TOY_SOLVER_NAME,
        report_status: bool = True,
        variable_cap: int = 12,
        grid_cap: int = 10 ** 7,
    ):
        self.domain = domain
        self.name = name
        self.solver_name = solver_name
        self.report_status = report_status
        self.variable_cap = variable_cap
        self.grid_cap = grid_cap

    def run(self, process: DecisionProcess, feedback: Optional[str] = None) -> SolverRun:
        run = toy_optimize(
            process,
            self.domain,
            report_status=self.report_status,
            variable_cap=self.variable_cap,
            grid_cap=self.grid_cap,
            variant_name=self.name,
        )
        return run.model_copy(update={"solver_name": self.solver_name})


class Fault(BaseModel):
    """
    One scripted defect.

    ``reports_to_heal`` counts the discrepancy reports mentioning the fault
    that the driver must receive before it behaves; ``heals=False`` keeps it
    broken forever.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["none", "drop-constraint", "flip-objective-sign", "perturb-objective", "report-status"] = "none"
    index: int = 0
    epsilon: float = 0.5
    status: SolverStatus = SolverStatus.ERROR
    heals: bool = True
    reports_to_heal: int = Field(default=1, ge=1)


class FaultyOptimizerDriver(OptimizerDriver):
    def __init__(self, base: ToyOptimizerDriver, fault: Fault, name: Optional[str] = None):
        self.base = base
        self.fault = fault
        self.name = name or base.name
        self.reports_seen = 0

    @property
    def healed(self) -> bool:
        return self.fault.heals and self.reports_seen >= self.fault.reports_to_heal

    def mentions_fault(self, feedback: str, process: DecisionProcess) -> bool:
        text = feedback.lower()
        kind = self.fault.kind
        if kind == "drop-constraint":
            if f"constraint {self.fault.index} " in text:
                return True
            if 0 <= self.fault.index < len(process.constraints):
                description = process.constraints[self.fault.index].description.lower()
                return bool(description) and description in text
            return False
        if kind in ("flip-objective-sign", "perturb-objective"):
            return "objective mismatch" in text
        if kind == "report-status":
            return "status" in text
        return False

    def run(self, process: DecisionProcess, feedback: Optional[str] = None) -> SolverRun:
        if feedback and self.mentions_fault(feedback, process):
            self.reports_seen += 1
            if self.healed:
                logger.info(f"{self.name}: {self.fault.kind} healed after {self.reports_seen} report(s)")

        base = ToyOptimizerDriver(
            self.base.domain,
            name=self.name,
            solver_name=self.base.solver_name,
            report_status=self.base.report_status,
            variable_cap=self.base.variable_cap,
            grid_cap=self.base.grid_cap,
        )
        kind = self.fault.kind
        if kind == "none" or self.healed:
            return base.run(process)

        if kind == "drop-constraint":
            kept = tuple(c for i, c in enumerate(process.constraints) if i != self.fault.index)
            return base.run(process.model_copy(update={"constraints": kept}))
        if kind == "flip-objective-sign":
            objective = process.objective_function
            flipped = ObjectiveSpec(
                direction=objective.direction,
                expression=f"-({objective.expression})",
                description=objective.description,
            )
            return base.run(process.model_copy(update={"objective_function": flipped}))
        run = base.run(process)
        if kind == "perturb-objective":
            if run.objective_value is None:
                return run
            return run.model_copy(update={"objective_value": run.objective_value + self.fault.epsilon})
        return run.model_copy(update={"status": self.fault.status})


def faulty_optimize_variants(base: ToyOptimizerDriver, fault_script: Sequence[Union[Fault, dict]]) -> List[OptimizerDriver]:
    """One driver per scripted fault, named variant_1, variant_2, ..."""
    drivers: List[OptimizerDriver] = []
    for position, fault in enumerate(fault_script, start=1):
        if not isinstance(fault, Fault):
            fault = Fault.model_validate(fault)
        drivers.append(FaultyOptimizerDriver(base, fault, name=f"variant_{position}"))
    return drivers


def toy_variants(domain: VariableDomain, count: int, **kwargs) -> List[OptimizerDriver]:
    return [ToyOptimizerDriver(domain, name=f"variant_{i}", **kwargs) for i in range(1, count + 1)]
