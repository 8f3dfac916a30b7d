"""
Structured decision-process representation produced by the extraction stage.

The wire format is one JSON object with nine top-level keys::

    problem_description, decision_variables, inputs, exogenous_variables,
    exogenous_uncertainties, state_variables, transition_function,
    objective_function, constraints
"""

import json
import re
from enum import Enum
from typing import Any, Dict, List, Set, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from optiloop.exceptions import ExpressionSyntaxError, MalformedDocument, SchemaViolation, UndeclaredSymbol
from optiloop.expressions import Expr, contains_comparison, free_identifiers, parse_expr
from optiloop.expressions.nodes import Compare, ForAll

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z_0-9]*(\[[^\[\]]*\])?$")


class VarType(str, Enum):
    INTEGER = "INTEGER"
    CONTINUOUS = "CONTINUOUS"
    BINARY = "BINARY"


class Direction(str, Enum):
    MINIMIZE = "minimize"
    MAXIMIZE = "maximize"


class _Strict(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)


def _freeze_numeric(value: Any, path: str = "value") -> Any:
    if isinstance(value, bool):
        raise ValueError(f"{path} must be numeric, got a boolean")
    if isinstance(value, (int, float)):
        return value
    if isinstance(value, (list, tuple)):
        items = tuple(_freeze_numeric(item, f"{path}[{i}]") for i, item in enumerate(value))
        nested = [isinstance(item, tuple) for item in items]
        if any(nested) and not all(nested):
            raise ValueError(f"{path} mixes scalars and lists")
        if items and all(nested) and len({len(item) for item in items}) > 1:
            raise ValueError(f"{path} is not rectangular")
        return items
    raise ValueError(f"{path} must be a number or a nested list of numbers")


class DecisionVariable(_Strict):
    """A scalar variable ``a`` or a family carrying its index signature, ``x[i,j]``"""
    name: str = Field(min_length=1)
    var_type: VarType = Field(alias="type")
    description: str = ""

    @field_validator("name")
    @classmethod
    def _identifier(cls, name: str) -> str:
        if not _NAME_RE.match(name):
            raise ValueError(f"'{name}' is not an identifier with an optional index signature")
        return name

    @property
    def base_name(self) -> str:
        return self.name.split("[", 1)[0]

    @property
    def is_family(self) -> bool:
        return "[" in self.name


class InputParameter(_Strict):
    name: str = Field(min_length=1)
    value: Any
    units: str = ""
    description: str = ""

    @field_validator("value")
    @classmethod
    def _numeric(cls, value: Any) -> Any:
        return _freeze_numeric(value)


def _parse_checked(text: str) -> Expr:
    try:
        return parse_expr(text)
    except ExpressionSyntaxError as e:
        raise ValueError(f"expression does not parse: {e}") from e


class ObjectiveSpec(_Strict):
    direction: Direction
    expression: str = Field(min_length=1)
    description: str = ""

    @field_validator("expression")
    @classmethod
    def _comparison_free(cls, expression: str) -> str:
        if contains_comparison(_parse_checked(expression)):
            raise ValueError("objective expression must not contain a comparison")
        return expression

    @property
    def tree(self) -> Expr:
        return parse_expr(self.expression)


class ConstraintSpec(_Strict):
    expression: str = Field(min_length=1)
    description: str = ""

    @field_validator("expression")
    @classmethod
    def _comparison(cls, expression: str) -> str:
        if not isinstance(_parse_checked(expression), (Compare, ForAll)):
            raise ValueError("constraint expression must be a comparison, optionally quantified")
        return expression

    @property
    def tree(self) -> Expr:
        return parse_expr(self.expression)


def _declared_name(entry: Any) -> str:
    if isinstance(entry, str):
        return entry.split("[", 1)[0]
    if isinstance(entry, dict) and isinstance(entry.get("name"), str):
        return entry["name"].split("[", 1)[0]
    return ""


class DecisionProcess(_Strict):
    problem_description: str
    decision_variables: Tuple[DecisionVariable, ...]
    inputs: Tuple[InputParameter, ...]
    exogenous_variables: Tuple[Any, ...]
    exogenous_uncertainties: Tuple[Any, ...]
    state_variables: Tuple[Any, ...]
    transition_function: str
    objective_function: ObjectiveSpec
    constraints: Tuple[ConstraintSpec, ...]

    @model_validator(mode="after")
    def _check_symbols(self) -> "DecisionProcess":
        seen: Set[str] = set()
        for variable in self.decision_variables:
            if variable.base_name in seen:
                raise SchemaViolation("decision_variables", f"duplicate variable '{variable.name}'")
            seen.add(variable.base_name)
        for parameter in self.inputs:
            if parameter.name in seen:
                raise SchemaViolation("inputs", f"duplicate name '{parameter.name}'")
            seen.add(parameter.name)

        declared = set(seen)
        for entry in (*self.exogenous_variables, *self.state_variables):
            name = _declared_name(entry)
            if name:
                declared.add(name)

        expressions = [("objective_function", self.objective_function.tree)]
        expressions.extend((f"constraints[{i}]", c.tree) for i, c in enumerate(self.constraints))
        for where, tree in expressions:
            unknown = sorted(free_identifiers(tree) - declared)
            if unknown:
                raise UndeclaredSymbol(unknown[0], where)
        return self

    @property
    def direction(self) -> Direction:
        return self.objective_function.direction

    @property
    def variable_names(self) -> Set[str]:
        return {v.base_name for v in self.decision_variables}

    @property
    def input_values(self) -> Dict[str, Any]:
        return {p.name: p.value for p in self.inputs}

    def constraint_trees(self) -> List[Expr]:
        return [c.tree for c in self.constraints]


def _schema_violation(error: ValidationError) -> SchemaViolation:
    first = error.errors()[0]
    field = ".".join(str(part) for part in first["loc"]) or "<root>"
    if first["type"] == "extra_forbidden":
        return SchemaViolation(field, f"unknown field '{first['loc'][-1]}'")
    return SchemaViolation(field, first["msg"])


def parse_decision_process(document: str) -> DecisionProcess:
    """
    Parse and validate an extraction document.

    Raises:
        MalformedDocument: the text is not JSON
        SchemaViolation: a field is missing, unknown or mistyped
        UndeclaredSymbol: an expression references an undeclared identifier
    """
    try:
        data = json.loads(document)
    except (TypeError, json.JSONDecodeError) as e:
        raise MalformedDocument(f"not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise SchemaViolation("<root>", "expected a JSON object")
    try:
        return DecisionProcess.model_validate(data)
    except ValidationError as e:
        raise _schema_violation(e) from e


def decision_process_to_dict(process: DecisionProcess) -> Dict[str, Any]:
    return process.model_dump(mode="json", by_alias=True)


def serialize_decision_process(process: DecisionProcess) -> str:
    """Canonical JSON text in schema key order"""
    return json.dumps(decision_process_to_dict(process), indent=2, ensure_ascii=False)


def canonical_variable_key(name: str) -> str:
    """``x[3, 6]`` and ``x[3][6]`` both become ``x[3,6]``"""
    return re.sub(r"\s+", "", name).replace("][", ",")
