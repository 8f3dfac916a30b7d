"""
Evaluation of expression trees against an environment of inputs, decision
variable values and index sets.
"""

import itertools
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, Iterator, List, Mapping, Optional, Sequence, Set, Tuple

from optiloop.exceptions import (
    DivisionByZero,
    EvaluationError,
    IndexOutOfRange,
    MissingVariable,
    UnboundIdentifier,
)
from optiloop.expressions.nodes import (
    Binary,
    Compare,
    Condition,
    Domain,
    Expr,
    ForAll,
    Generator,
    Index,
    Name,
    NamedSet,
    Number,
    RangeSet,
    Sum,
    Unary,
)

FEASIBILITY_SLACK = 1e-9

_UNSET = object()


@dataclass(frozen=True)
class Environment:
    """
    Values visible to an expression.

    ``inputs`` holds scalars or nested lists addressed with ``index_base``
    (1 means ``cost[1]`` is the first element). ``assignment`` maps canonical
    variable keys such as ``x[3,6]`` or ``a`` to numbers. Names listed in
    ``variable_names`` raise MissingVariable instead of UnboundIdentifier
    when an instance has no value.
    """
    inputs: Mapping[str, Any] = field(default_factory=dict)
    assignment: Mapping[str, float] = field(default_factory=dict)
    index_sets: Mapping[str, Sequence[int]] = field(default_factory=dict)
    variable_names: FrozenSet[str] = frozenset()
    index_base: int = 1


@dataclass(frozen=True)
class Violation:
    bindings: Tuple[Tuple[str, int], ...]
    lhs: float
    rhs: float
    op: str

    def to_dict(self) -> Dict[str, Any]:
        return {
            "bindings": {name: value for name, value in self.bindings},
            "lhs": self.lhs,
            "rhs": self.rhs,
            "op": self.op,
        }


def variable_key(base: str, indices: Sequence[int]) -> str:
    if not indices:
        return base
    return f"{base}[{','.join(str(i) for i in indices)}]"


def comparison_holds(op: str, lhs: float, rhs: float, slack: float = FEASIBILITY_SLACK) -> bool:
    if op == "<=":
        return lhs <= rhs + slack
    if op == ">=":
        return lhs >= rhs - slack
    if op == "==":
        return abs(lhs - rhs) <= slack
    if op == "<":
        return lhs < rhs
    if op == ">":
        return lhs > rhs
    if op == "!=":
        return lhs != rhs
    raise EvaluationError(f"unknown comparison operator '{op}'")


class _Evaluator:
    def __init__(self, env: Environment):
        self.env = env
        self.scope: Dict[str, int] = {}

    def arith(self, node: Expr) -> float:
        if isinstance(node, Number):
            return node.value
        if isinstance(node, Name):
            return self.name(node.ident)
        if isinstance(node, Index):
            return self.index(node)
        if isinstance(node, Binary):
            lhs = self.arith(node.lhs)
            rhs = self.arith(node.rhs)
            if node.op == "+":
                return lhs + rhs
            if node.op == "-":
                return lhs - rhs
            if node.op == "*":
                return lhs * rhs
            if rhs == 0:
                raise DivisionByZero("division by zero")
            return lhs / rhs
        if isinstance(node, Unary):
            return -self.arith(node.operand)
        if isinstance(node, Sum):
            total = 0.0
            for _ in self.expand(node.generators, node.condition):
                total += self.arith(node.body)
            return total
        raise EvaluationError(f"{type(node).__name__} is not an arithmetic expression")

    def name(self, ident: str) -> float:
        if ident in self.scope:
            return float(self.scope[ident])
        env = self.env
        if ident in env.inputs:
            value = env.inputs[ident]
            if isinstance(value, (list, tuple)):
                raise EvaluationError(f"input '{ident}' is an array and must be subscripted")
            return float(value)
        if ident in env.assignment:
            return float(env.assignment[ident])
        if ident in env.variable_names:
            raise MissingVariable(ident)
        raise UnboundIdentifier(ident)

    def subscripts(self, node: Index) -> List[int]:
        values = []
        for subscript in node.subscripts:
            value = self.arith(subscript)
            if not float(value).is_integer():
                raise EvaluationError(f"non-integer subscript {value} in '{node.base}'")
            values.append(int(value))
        return values

    def index(self, node: Index) -> float:
        indices = self.subscripts(node)
        env = self.env
        if node.base in env.inputs:
            value = env.inputs[node.base]
            for position, idx in enumerate(indices):
                if not isinstance(value, (list, tuple)):
                    raise IndexOutOfRange(
                        f"'{node.base}' has {position} dimension(s) but {len(indices)} subscripts were given"
                    )
                offset = idx - env.index_base
                if offset < 0 or offset >= len(value):
                    raise IndexOutOfRange(f"{variable_key(node.base, indices)} is out of range")
                value = value[offset]
            if isinstance(value, (list, tuple)):
                raise EvaluationError(f"'{variable_key(node.base, indices)}' is not a scalar")
            return float(value)
        key = variable_key(node.base, indices)
        if key in env.assignment:
            return float(env.assignment[key])
        if node.base in env.variable_names:
            raise MissingVariable(key)
        raise UnboundIdentifier(key)

    def domain(self, domain: Domain) -> Sequence[int]:
        if isinstance(domain, RangeSet):
            start = self.arith(domain.start)
            stop = self.arith(domain.stop)
            if not (float(start).is_integer() and float(stop).is_integer()):
                raise EvaluationError("range bounds must be integers")
            return range(int(start), int(stop))
        env = self.env
        if domain.name in env.index_sets:
            return env.index_sets[domain.name]
        value = env.inputs.get(domain.name)
        if isinstance(value, (list, tuple)) and all(
            isinstance(v, (int, float)) and float(v).is_integer() for v in value
        ):
            return [int(v) for v in value]
        raise UnboundIdentifier(domain.name)

    def holds(self, condition: Condition) -> bool:
        return all(
            comparison_holds(clause.op, self.arith(clause.lhs), self.arith(clause.rhs), slack=0.0)
            for clause in condition.clauses
        )

    def expand(self, generators: Tuple[Generator, ...], condition: Optional[Condition], position: int = 0) -> Iterator[None]:
        """Bind generator indices left to right, yielding once per surviving instance"""
        if position == len(generators):
            if condition is None or self.holds(condition):
                yield None
            return
        generator = generators[position]
        domain = self.domain(generator.domain)
        saved = {name: self.scope.get(name, _UNSET) for name in generator.names}
        try:
            for values in itertools.product(domain, repeat=len(generator.names)):
                self.scope.update(zip(generator.names, values))
                yield from self.expand(generators, condition, position + 1)
        finally:
            for name, previous in saved.items():
                if previous is _UNSET:
                    self.scope.pop(name, None)
                else:
                    self.scope[name] = previous

    def bindings(self, generators: Tuple[Generator, ...]) -> Tuple[Tuple[str, int], ...]:
        return tuple((name, self.scope[name]) for generator in generators for name in generator.names)

    def collect(self, node: Expr, keys: Set[str]) -> None:
        if isinstance(node, Number):
            return
        if isinstance(node, Name):
            if node.ident not in self.scope and node.ident not in self.env.inputs:
                keys.add(node.ident)
            return
        if isinstance(node, Index):
            if node.base not in self.env.inputs:
                keys.add(variable_key(node.base, self.subscripts(node)))
            return
        if isinstance(node, Unary):
            self.collect(node.operand, keys)
            return
        if isinstance(node, (Binary, Compare)):
            self.collect(node.lhs, keys)
            self.collect(node.rhs, keys)
            return
        if isinstance(node, (Sum, ForAll)):
            for _ in self.expand(node.generators, node.condition):
                self.collect(node.body, keys)
            return
        raise EvaluationError(f"cannot collect variables from {type(node).__name__}")


def eval_arith(expr: Expr, env: Environment) -> float:
    """
    Evaluate a comparison-free expression.

    Generators expand left to right and sums accumulate in that order, so the
    result is bit-identical for identical inputs.
    """
    if isinstance(expr, (Compare, ForAll)):
        raise EvaluationError("comparison found where an arithmetic expression was expected")
    return _Evaluator(env).arith(expr)


def iter_violations(constraint: Expr, env: Environment) -> Iterator[Violation]:
    evaluator = _Evaluator(env)
    if isinstance(constraint, Compare):
        lhs = evaluator.arith(constraint.lhs)
        rhs = evaluator.arith(constraint.rhs)
        if not comparison_holds(constraint.op, lhs, rhs):
            yield Violation((), lhs, rhs, constraint.op)
        return
    if isinstance(constraint, ForAll):
        body = constraint.body
        for _ in evaluator.expand(constraint.generators, constraint.condition):
            lhs = evaluator.arith(body.lhs)
            rhs = evaluator.arith(body.rhs)
            if not comparison_holds(body.op, lhs, rhs):
                yield Violation(evaluator.bindings(constraint.generators), lhs, rhs, body.op)
        return
    raise EvaluationError(f"{type(constraint).__name__} is not a constraint")


def eval_constraint(constraint: Expr, env: Environment) -> List[Violation]:
    """All violated instances of a constraint, in generator order"""
    return list(iter_violations(constraint, env))


def is_satisfied(constraint: Expr, env: Environment) -> bool:
    """Short-circuiting feasibility test"""
    return next(iter_violations(constraint, env), None) is None


def collect_variable_keys(expr: Expr, env: Environment) -> Set[str]:
    """Canonical keys of every decision variable instance the expression touches"""
    keys: Set[str] = set()
    _Evaluator(env).collect(expr, keys)
    return keys
