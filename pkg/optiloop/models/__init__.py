"""
Models package initialization
"""
from optiloop.models.decision_process import (
    ConstraintSpec,
    DecisionProcess,
    DecisionVariable,
    Direction,
    InputParameter,
    ObjectiveSpec,
    VarType,
    canonical_variable_key,
    parse_decision_process,
    serialize_decision_process,
)
from optiloop.models.solver_run import SolverRun, SolverStatus

__all__ = [
    "ConstraintSpec",
    "DecisionProcess",
    "DecisionVariable",
    "Direction",
    "InputParameter",
    "ObjectiveSpec",
    "SolverRun",
    "SolverStatus",
    "VarType",
    "canonical_variable_key",
    "parse_decision_process",
    "serialize_decision_process",
]
