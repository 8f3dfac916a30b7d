"""
Solver status vocabulary and single-variant optimizer results.
"""

import logging
import math
from enum import Enum
from typing import Any, Dict, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

logger = logging.getLogger(__name__)


class SolverStatus(str, Enum):
    OPTIMAL = "optimal"
    TIME_LIMIT = "time_limit"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ERROR = "error"

    @property
    def rank(self) -> int:
        """Tie-break priority; larger ranks are preferred"""
        return _STATUS_RANK[self]

    def outranks(self, other: "SolverStatus") -> bool:
        return self.rank > other.rank

    @property
    def has_solution(self) -> bool:
        return self in (SolverStatus.OPTIMAL, SolverStatus.TIME_LIMIT)

    @classmethod
    def parse(cls, value: str) -> "SolverStatus":
        normalized = value.strip().lower().replace(" ", "_").replace("-", "_")
        if normalized == "timelimit":
            normalized = "time_limit"
        return cls(normalized)


_STATUS_RANK = {
    SolverStatus.OPTIMAL: 4,
    SolverStatus.TIME_LIMIT: 3,
    SolverStatus.INFEASIBLE: 2,
    SolverStatus.UNBOUNDED: 1,
    SolverStatus.ERROR: 0,
}

STATUS_PRIORITY = sorted(SolverStatus, key=lambda s: -s.rank)


class SolverRun(BaseModel):
    """One optimizer variant's result"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    variant_name: str = Field(min_length=1)
    variables: Dict[str, float] = Field(default_factory=dict)
    objective_value: Optional[float] = None
    status: SolverStatus
    solver_name: str = ""
    solve_time: float = Field(default=0.0, ge=0.0)
    iterations: int = Field(default=0, ge=0)
    gap: Optional[float] = Field(default=None, ge=0.0)
    message: str = ""

    @model_validator(mode="after")
    def _objective_required(self) -> "SolverRun":
        if self.status == SolverStatus.OPTIMAL and self.objective_value is None:
            raise ValueError("an optimal run must report an objective value")
        if self.objective_value is not None and not math.isfinite(self.objective_value):
            raise ValueError("objective value must be finite")
        return self

    @classmethod
    def failed(cls, variant_name: str, message: str, solver_name: str = "") -> "SolverRun":
        return cls(variant_name=variant_name, status=SolverStatus.ERROR, solver_name=solver_name, message=message)

    @classmethod
    def from_result_json(cls, variant_name: str, document: Dict[str, Any]) -> "SolverRun":
        """
        Read an optimizer variant output object.

        Args:
            variant_name: Name to give the run
            document: Object with optimal_variables, optimal_objective_value,
                status and solver_info keys

        Returns:
            The parsed run; an "optimal" claim without an objective is demoted to error
        """
        info = document.get("solver_info") or {}
        status = SolverStatus.parse(str(document.get("status", "error")))
        objective = document.get("optimal_objective_value")
        message = ""
        if status == SolverStatus.OPTIMAL and objective is None:
            logger.warning(f"{variant_name} claims optimal without an objective; demoting to error")
            status = SolverStatus.ERROR
            message = "optimal status without objective value"
        return cls(
            variant_name=variant_name,
            variables={str(k): float(v) for k, v in (document.get("optimal_variables") or {}).items()},
            objective_value=None if objective is None else float(objective),
            status=status,
            solver_name=str(info.get("solver_name", "")),
            solve_time=float(info.get("solve_time") or 0.0),
            iterations=int(info.get("iterations") or 0),
            gap=None if info.get("gap") is None else float(info["gap"]),
            message=message,
        )

    def to_result_json(self) -> Dict[str, Any]:
        return {
            "optimal_variables": dict(self.variables),
            "optimal_objective_value": self.objective_value,
            "status": self.status.value,
            "solver_info": {
                "solver_name": self.solver_name,
                "solve_time": self.solve_time,
                "iterations": self.iterations,
                "gap": self.gap,
            },
        }

    def summary(self) -> Dict[str, Any]:
        return {
            "variant_name": self.variant_name,
            "solver": self.solver_name,
            "status": self.status.value,
            "objective_value": self.objective_value,
            "solve_time": self.solve_time,
        }
