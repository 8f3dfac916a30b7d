"""
Builds evaluation environments for a decision process, inferring index sets
that the extraction leaves implicit.
"""

from typing import Any, Dict, List, Mapping, Optional, Sequence, Set, Tuple

from optiloop.exceptions import EvaluationError
from optiloop.expressions import Environment, domain_names
from optiloop.models.decision_process import DecisionProcess, canonical_variable_key


def _is_integer_list(value: Any) -> bool:
    return isinstance(value, (list, tuple)) and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) and float(v).is_integer() for v in value
    )


def referenced_domains(process: DecisionProcess) -> Set[str]:
    names: Set[str] = set(domain_names(process.objective_function.tree))
    for constraint in process.constraints:
        names |= domain_names(constraint.tree)
    return names


def infer_index_sets(process: DecisionProcess, declared: Optional[Mapping[str, Sequence[int]]] = None) -> Dict[str, List[int]]:
    """
    Resolve every generator domain of the process.

    A declared set wins; an input holding a flat list of integers is used as
    is; otherwise the set is ``1..n`` where n is the common first-axis length
    of all list-valued inputs.

    Raises:
        EvaluationError: when the length is missing or ambiguous
    """
    declared = dict(declared or {})
    inputs = process.input_values
    lengths = sorted({len(v) for v in inputs.values() if isinstance(v, (list, tuple))})
    resolved: Dict[str, List[int]] = {}
    for name in sorted(referenced_domains(process)):
        if name in declared:
            resolved[name] = [int(v) for v in declared[name]]
        elif name in inputs and _is_integer_list(inputs[name]):
            continue
        elif len(lengths) == 1:
            resolved[name] = list(range(1, lengths[0] + 1))
        else:
            raise EvaluationError(
                f"cannot infer index set '{name}' from input shapes {lengths}; declare it explicitly"
            )
    return resolved


def process_environment(
    process: DecisionProcess,
    assignment: Optional[Mapping[str, float]] = None,
    index_sets: Optional[Mapping[str, Sequence[int]]] = None,
) -> Environment:
    normalized = {canonical_variable_key(k): float(v) for k, v in (assignment or {}).items()}
    return Environment(
        inputs=process.input_values,
        assignment=normalized,
        index_sets=infer_index_sets(process, index_sets),
        variable_names=frozenset(process.variable_names),
    )


def variable_sort_key(key: str) -> Tuple[str, Tuple[int, ...]]:
    """Orders ``x[2,10]`` after ``x[2,9]``"""
    if "[" not in key:
        return key, ()
    base, rest = key.split("[", 1)
    indices = tuple(int(part) for part in rest.rstrip("]").split(",") if part)
    return base, indices
