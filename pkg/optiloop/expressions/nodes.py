"""
Expression tree nodes.

Every node is a frozen dataclass, so trees compare structurally and can be
shared freely between threads.
"""

from dataclasses import dataclass
from typing import Optional, Tuple, Union


@dataclass(frozen=True)
class Number:
    value: float


@dataclass(frozen=True)
class Name:
    ident: str


@dataclass(frozen=True)
class Index:
    """Subscripted reference; ``c[i][j]`` and ``c[i, j]`` both become Index("c", (i, j))"""
    base: str
    subscripts: Tuple["Expr", ...]


@dataclass(frozen=True)
class Binary:
    op: str
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Unary:
    operand: "Expr"


@dataclass(frozen=True)
class Compare:
    op: str
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class NamedSet:
    name: str


@dataclass(frozen=True)
class RangeSet:
    """Half-open integer range, as Python's range(start, stop)"""
    start: "Expr"
    stop: "Expr"


Domain = Union[NamedSet, RangeSet]


@dataclass(frozen=True)
class Generator:
    names: Tuple[str, ...]
    domain: Domain


@dataclass(frozen=True)
class Condition:
    """Conjunction of comparisons used as a generator filter"""
    clauses: Tuple[Compare, ...]


@dataclass(frozen=True)
class Sum:
    body: "Expr"
    generators: Tuple[Generator, ...]
    condition: Optional[Condition] = None


@dataclass(frozen=True)
class ForAll:
    body: Compare
    generators: Tuple[Generator, ...]
    condition: Optional[Condition] = None


Expr = Union[Number, Name, Index, Binary, Unary, Compare, Sum, ForAll]
