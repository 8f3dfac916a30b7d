"""
Asymmetric validation: a simulator checks feasibility and re-evaluates the
objective of the consensus solution, and a bounded loop feeds discrepancy
reports back into the optimizer drivers.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field

from optiloop.exceptions import CapExceeded, EvaluationError, OptimizerError, PipelineError, SimulatorGateError
from optiloop.expressions import collect_variable_keys, eval_arith, iter_violations
from optiloop.models import DecisionProcess, SolverRun, SolverStatus, serialize_decision_process
from optiloop.models.environment import process_environment, variable_sort_key
from optiloop.prompts import simulator_prompt
from optiloop.providers.base import LLMProvider, OptimizerDriver, ProviderRequest, RequestKind
from optiloop.providers.optimizer_agent import extract_result_json
from optiloop.providers.toy_solver import VariableDomain
from optiloop.services.consensus import ConsensusConfig, ConsensusResult, consensus

logger = logging.getLogger(__name__)


class ConstraintViolation(BaseModel):
    model_config = ConfigDict(frozen=True)

    constraint_index: int
    description: str
    expression: str
    bindings: Dict[str, int]
    lhs: float
    rhs: float
    op: str

    def describe(self) -> str:
        where = ", ".join(f"{k}={v}" for k, v in self.bindings.items())
        at = f" at {where}" if where else ""
        return f"lhs {self.lhs!r} {self.op} rhs {self.rhs!r} does not hold{at}"


class SimulatorVerdict(BaseModel):
    """
    Feasibility and objective of one assignment.

    ``objective`` is infinite whenever the assignment is infeasible;
    ``raw_objective`` is evaluated regardless and only serves diagnostics.
    """
    model_config = ConfigDict(frozen=True)

    feasible: bool
    objective: float
    violations: Tuple[ConstraintViolation, ...] = ()
    raw_objective: Optional[float] = None

    def to_dict(self) -> Dict[str, object]:
        return {
            "feasible": self.feasible,
            "objective": self.objective if math.isfinite(self.objective) else None,
            "violations": [v.model_dump() for v in self.violations],
        }


class Simulator(Protocol):
    def simulate(self, assignment: Mapping[str, float]) -> SimulatorVerdict:
        ...


def simulate(
    process: DecisionProcess,
    assignment: Mapping[str, float],
    index_sets: Optional[Mapping[str, Sequence[int]]] = None,
) -> SimulatorVerdict:
    """
    Evaluate every constraint and the objective under an assignment.

    Raises:
        MissingVariable: an instantiated decision variable has no value
        EvaluationError: propagated from the expression engine
    """
    env = process_environment(process, assignment, index_sets)
    violations: List[ConstraintViolation] = []
    for position, constraint in enumerate(process.constraints):
        for violation in iter_violations(constraint.tree, env):
            violations.append(ConstraintViolation(
                constraint_index=position,
                description=constraint.description,
                expression=constraint.expression,
                bindings=dict(violation.bindings),
                lhs=violation.lhs,
                rhs=violation.rhs,
                op=violation.op,
            ))
    raw = eval_arith(process.objective_function.tree, env)
    feasible = not violations
    return SimulatorVerdict(
        feasible=feasible,
        objective=raw if feasible else math.inf,
        violations=tuple(violations),
        raw_objective=raw,
    )


class ExpressionSimulator:
    """Simulator derived from the decision process through the expression engine"""

    def __init__(self, process: DecisionProcess, index_sets: Optional[Mapping[str, Sequence[int]]] = None):
        self.process = process
        self.index_sets = dict(index_sets or {})

    def simulate(self, assignment: Mapping[str, float]) -> SimulatorVerdict:
        return simulate(self.process, assignment, self.index_sets)

    def variable_keys(self) -> List[str]:
        env = process_environment(self.process, {}, self.index_sets)
        keys = set(collect_variable_keys(self.process.objective_function.tree, env))
        for tree in self.process.constraint_trees():
            keys |= collect_variable_keys(tree, env)
        return sorted(keys, key=variable_sort_key)


def parse_simulator_verdict(text: str) -> SimulatorVerdict:
    """
    Read a provider simulator answer. Raises EvaluationError when the answer
    is not a verdict object.
    """
    try:
        document = extract_result_json(text)
    except OptimizerError as e:
        raise EvaluationError(f"simulator answer is not a JSON object: {e}") from e
    feasible = document.get("feasible")
    if not isinstance(feasible, bool):
        raise EvaluationError("simulator answer needs a boolean 'feasible'")
    try:
        raw = document.get("objective_value")
        raw = None if raw is None else float(raw)
        violations = tuple(
            ConstraintViolation(
                constraint_index=int(item.get("constraint_index", k)),
                description=str(item.get("description", "")),
                expression=str(item.get("expression", "")),
                bindings={str(name): int(value) for name, value in (item.get("bindings") or {}).items()},
                lhs=float(item["lhs"]),
                rhs=float(item["rhs"]),
                op=str(item.get("op", "")),
            )
            for k, item in enumerate(document.get("violations") or [])
        )
    except (AttributeError, KeyError, TypeError, ValueError) as e:
        raise EvaluationError(f"malformed simulator answer: {e}") from e
    if raw is not None and not math.isfinite(raw):
        raise EvaluationError("simulator objective must be finite")
    if feasible and raw is None:
        raise EvaluationError("a feasible verdict must carry an objective value")
    return SimulatorVerdict(
        feasible=feasible,
        objective=raw if feasible else math.inf,
        violations=violations,
        raw_objective=raw,
    )


class AgentSimulator:
    """Simulator answered by a provider from the decision process and a candidate assignment"""

    def __init__(self, llm: LLMProvider, process: DecisionProcess, run_id: str = "default"):
        self.llm = llm
        self.process = process
        self.run_id = run_id
        self._process_json = serialize_decision_process(process)

    def simulate(self, assignment: Mapping[str, float]) -> SimulatorVerdict:
        request = ProviderRequest(
            kind=RequestKind.GENERATE_SIMULATOR,
            prompt=simulator_prompt(self._process_json, assignment),
            run_id=self.run_id,
        )
        verdict = parse_simulator_verdict(self.llm.complete(request))
        logger.info(f"Provider simulator: feasible={verdict.feasible} violations={len(verdict.violations)}")
        return verdict


class ValidationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rtol: float = Field(default=1e-6, ge=0.0)
    atol: float = Field(default=1e-9, ge=0.0)
    max_iterations: int = Field(default=3, ge=1)


def tolerance(f_opt: float, cfg: ValidationConfig) -> float:
    return cfg.atol + cfg.rtol * abs(f_opt)


def validate(
    x_star: Mapping[str, float],
    f_opt: float,
    verdict: SimulatorVerdict,
    cfg: ValidationConfig,
) -> Tuple[bool, float]:
    """Accept when the simulator finds x* feasible and |F_sim - F_opt| <= atol + rtol * |F_opt|"""
    if not math.isfinite(f_opt):
        raise ValueError("optimizer objective must be finite")
    delta = tolerance(f_opt, cfg)
    if not verdict.feasible:
        return False, delta
    return abs(verdict.objective - f_opt) <= delta, delta


class DiscrepancyReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    text: str
    data: Dict[str, object]

    @property
    def issues(self) -> List[str]:
        return [line[2:] for line in self.text.splitlines() if line.startswith("- ")]


def objective_verification(f_opt: Optional[float], verdict: Optional[SimulatorVerdict], cfg: ValidationConfig) -> Dict[str, object]:
    if f_opt is None or verdict is None or not verdict.feasible:
        return {
            "optimizer_value": f_opt,
            "simulator_value": None,
            "difference": None,
            "match": False,
        }
    difference = abs(verdict.objective - f_opt)
    return {
        "optimizer_value": f_opt,
        "simulator_value": verdict.objective,
        "difference": difference,
        "match": difference <= tolerance(f_opt, cfg),
    }


def discrepancy_report(
    verdict: SimulatorVerdict,
    x_star: Mapping[str, float],
    f_opt: float,
    cfg: Optional[ValidationConfig] = None,
) -> DiscrepancyReport:
    """
    Describe why x* failed validation, in constraint order then binding order.

    The text goes verbatim into the next optimizer invocation; the data is the
    same content as JSON.
    """
    cfg = cfg or ValidationConfig()
    lines = ["The consensus solution failed simulator validation."]
    data: Dict[str, object] = {"constraint_violations": [], "objective_mismatch": None}

    if verdict.violations:
        lines.append("Constraint violations:")
        for violation in verdict.violations:
            label = f"constraint {violation.constraint_index} ({violation.description or violation.expression})"
            lines.append(f"- {label}: {violation.describe()}")
        data["constraint_violations"] = [v.model_dump() for v in verdict.violations]

    delta = tolerance(f_opt, cfg)
    simulated = verdict.objective if verdict.feasible else verdict.raw_objective
    if simulated is not None and abs(simulated - f_opt) > delta:
        difference = abs(simulated - f_opt)
        lines.append("Objective check:")
        lines.append(
            f"- objective mismatch: optimizer reported {f_opt!r}, simulator computed {simulated!r}, "
            f"difference {difference!r} exceeds tolerance {delta!r}"
        )
        data["objective_mismatch"] = {
            "optimizer_value": f_opt,
            "simulator_value": simulated,
            "difference": difference,
            "tolerance": delta,
        }
    return DiscrepancyReport(text="\n".join(lines), data=data)


class UnitCheck(BaseModel):
    """An assignment with the verdict a trustworthy simulator must return for it"""
    model_config = ConfigDict(frozen=True)

    name: str
    assignment: Dict[str, float]
    expected_feasible: bool
    expected_objective: Optional[float] = None


def default_unit_checks(
    process: DecisionProcess,
    index_sets: Optional[Mapping[str, Sequence[int]]] = None,
    domain: Optional[VariableDomain] = None,
    extra: Sequence[UnitCheck] = (),
) -> List[UnitCheck]:
    """
    The all-zero assignment, plus the all-lower-bounds assignment when a
    variable domain is known. Expectations come from the reference
    expression simulator.
    """
    reference = ExpressionSimulator(process, index_sets)
    keys = reference.variable_keys()
    candidates = [("zero assignment", {key: 0.0 for key in keys})]
    if domain is not None:
        types = {v.base_name: v.var_type for v in process.decision_variables}
        try:
            lower = {key: float(domain.bounds_for(key, types[key.split("[", 1)[0]])[0]) for key in keys}
        except (CapExceeded, KeyError):
            lower = None
        if lower is not None and lower != candidates[0][1]:
            candidates.append(("lower-bound assignment", lower))

    checks = []
    for name, assignment in candidates:
        verdict = reference.simulate(assignment)
        checks.append(UnitCheck(
            name=name,
            assignment=assignment,
            expected_feasible=verdict.feasible,
            expected_objective=verdict.objective if verdict.feasible else None,
        ))
    checks.extend(extra)
    return checks


def run_simulator_gate(simulator: Simulator, unit_checks: Sequence[UnitCheck], cfg: Optional[ValidationConfig] = None) -> List[str]:
    """Failure diagnostics for every unit check the simulator gets wrong"""
    if not unit_checks:
        raise ValueError("the simulator gate needs at least one unit check")
    cfg = cfg or ValidationConfig()
    failures = []
    for check in unit_checks:
        try:
            verdict = simulator.simulate(check.assignment)
        except PipelineError as e:
            failures.append(f"{check.name}: simulator raised {type(e).__name__}: {e}")
            continue
        if verdict.feasible != check.expected_feasible:
            expected = "feasible" if check.expected_feasible else "infeasible"
            failures.append(f"{check.name}: expected {expected}, simulator said otherwise")
            continue
        if check.expected_feasible and check.expected_objective is not None:
            delta = tolerance(check.expected_objective, cfg)
            if abs(verdict.objective - check.expected_objective) > delta:
                failures.append(
                    f"{check.name}: expected objective {check.expected_objective!r}, got {verdict.objective!r}"
                )
    return failures


def simulator_gate(simulator: Simulator, unit_checks: Sequence[UnitCheck], cfg: Optional[ValidationConfig] = None) -> bool:
    failures = run_simulator_gate(simulator, unit_checks, cfg)
    for failure in failures:
        logger.warning(f"Simulator gate: {failure}")
    return not failures


class ValidationReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    passed: bool
    num_validation_iterations: int
    problem_analysis: Dict[str, bool]
    constraint_violations: List[Dict[str, object]]
    objective_verification: Dict[str, object]
    validation_history: List[Dict[str, object]]
    notes: List[str] = Field(default_factory=list)

    def to_json(self) -> Dict[str, object]:
        return self.model_dump()


def run_ensemble(
    drivers: Sequence[OptimizerDriver],
    process: DecisionProcess,
    feedback: Optional[str] = None,
    max_workers: Optional[int] = None,
) -> List[SolverRun]:
    """Run every driver concurrently; a driver that raises contributes an error run"""
    def run_one(driver: OptimizerDriver) -> SolverRun:
        try:
            return driver.run(process, feedback)
        except PipelineError as e:
            logger.error(f"{driver.name} failed: {e}")
            return SolverRun.failed(driver.name, str(e))

    results: Dict[int, SolverRun] = {}
    with ThreadPoolExecutor(max_workers=max_workers or max(1, len(drivers))) as executor:
        futures = {executor.submit(run_one, driver): position for position, driver in enumerate(drivers)}
        for future in as_completed(futures):
            results[futures[future]] = future.result()
    return [results[position] for position in range(len(drivers))]


IterationCallback = Callable[[int, List[SolverRun], ConsensusResult, Optional[SimulatorVerdict], Dict[str, object]], None]


def _fixes(iteration: int) -> List[str]:
    if iteration == 0:
        return []
    return [f"re-ran optimizer with discrepancy report from iteration {iteration - 1}"]


def refinement_loop(
    process: DecisionProcess,
    optimizer: Union[OptimizerDriver, Sequence[OptimizerDriver]],
    cfg: ValidationConfig,
    consensus_cfg: Optional[ConsensusConfig] = None,
    simulator: Optional[Simulator] = None,
    index_sets: Optional[Mapping[str, Sequence[int]]] = None,
    unit_checks: Optional[Sequence[UnitCheck]] = None,
    on_iteration: Optional[IterationCallback] = None,
) -> Tuple[ConsensusResult, ValidationReport]:
    """
    Optimize, aggregate, simulate and validate up to ``cfg.max_iterations``
    times, handing each discrepancy report to the next optimizer round.

    Args:
        process: Selected extraction
        optimizer: One driver or an ensemble of variant drivers
        cfg: Tolerances and iteration cap
        consensus_cfg: Ensemble aggregation settings
        simulator: Defaults to the expression simulator of ``process``
        unit_checks: Gate checks; defaults to ``default_unit_checks``
        on_iteration: Called after every iteration with its runs, consensus,
            verdict and history entry

    Raises:
        SimulatorGateError: the simulator failed its unit checks
    """
    drivers = [optimizer] if isinstance(optimizer, OptimizerDriver) else list(optimizer)
    if not drivers:
        raise ValueError("at least one optimizer driver is required")
    consensus_cfg = consensus_cfg or ConsensusConfig(num_variants=len(drivers))
    simulator = simulator or ExpressionSimulator(process, index_sets)

    # The simulator must pass its unit checks before it can judge anything
    checks = list(unit_checks) if unit_checks is not None else default_unit_checks(process, index_sets)
    failures = run_simulator_gate(simulator, checks, cfg)
    if failures:
        raise SimulatorGateError(failures)

    history: List[Dict[str, object]] = []
    notes: List[str] = []
    feedback: Optional[str] = None
    result: Optional[ConsensusResult] = None
    verdict: Optional[SimulatorVerdict] = None
    passed = False

    for iteration in range(cfg.max_iterations):
        logger.info(f"Validation iteration {iteration} with {len(drivers)} optimizer variant(s)")
        verdict = None
        issues: List[str] = []
        runs: List[SolverRun] = []
        try:
            runs = run_ensemble(drivers, process, feedback)
            result = consensus(runs, consensus_cfg, process.direction)
        except OptimizerError as e:
            logger.error(f"Iteration {iteration} failed: {e}")
            result = consensus([], consensus_cfg, process.direction)
            issues = [f"optimizer error: {e}"]
            passed = False
            feedback = "The optimizer failed: " + str(e)
        else:
            if not result.status.has_solution or result.objective_value is None:
                issues = [f"consensus status {result.status.value}: no solution to validate"]
                passed = False
                feedback = "No solution was produced; fix the model so the solver returns an optimal status.\n- " + issues[0]
            else:
                if result.status == SolverStatus.TIME_LIMIT:
                    notes.append(f"iteration {iteration}: time_limit consensus validated as advisory")
                try:
                    verdict = simulator.simulate(result.variables)
                except EvaluationError as e:
                    issues = [f"simulator could not evaluate the solution: {e}"]
                    passed = False
                    feedback = "The solution is incomplete.\n- " + issues[0]
                else:
                    passed, _ = validate(result.variables, result.objective_value, verdict, cfg)
                    if not passed:
                        report = discrepancy_report(verdict, result.variables, result.objective_value, cfg)
                        issues = report.issues
                        feedback = report.text

        # Record the iteration whether or not it passed
        entry: Dict[str, object] = {
            "iteration": iteration,
            "passed": passed,
            "issues_found": issues,
            "fixes_applied": _fixes(iteration),
        }
        history.append(entry)
        if on_iteration is not None:
            on_iteration(iteration, runs, result, verdict, entry)
        if passed:
            logger.info(f"Validation passed on iteration {iteration}")
            break
        logger.warning(f"Validation iteration {iteration} failed with {len(issues)} issue(s)")

    solution_present = result is not None and result.status.has_solution and result.objective_value is not None
    report = ValidationReport(
        passed=passed,
        num_validation_iterations=len(history),
        problem_analysis={
            "problem_feasible": bool(verdict is not None and verdict.feasible),
            "has_trivial_solutions": bool(
                solution_present and result.variables and all(v == 0 for v in result.variables.values())
            ),
        },
        constraint_violations=[v.model_dump() for v in verdict.violations] if verdict is not None else [],
        objective_verification=objective_verification(
            result.objective_value if solution_present else None, verdict, cfg
        ),
        validation_history=history,
        notes=notes,
    )
    return result, report
