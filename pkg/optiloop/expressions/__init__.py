"""
Expression language for objectives and constraints
"""
from optiloop.expressions.evaluator import (
    FEASIBILITY_SLACK,
    Environment,
    Violation,
    collect_variable_keys,
    eval_arith,
    eval_constraint,
    is_satisfied,
    iter_violations,
    variable_key,
)
from optiloop.expressions.nodes import Expr
from optiloop.expressions.parser import (
    contains_comparison,
    domain_names,
    format_expr,
    free_identifiers,
    parse_expr,
)

__all__ = [
    "FEASIBILITY_SLACK",
    "Environment",
    "Expr",
    "Violation",
    "collect_variable_keys",
    "contains_comparison",
    "domain_names",
    "eval_arith",
    "eval_constraint",
    "format_expr",
    "free_identifiers",
    "is_satisfied",
    "iter_violations",
    "parse_expr",
    "variable_key",
]
