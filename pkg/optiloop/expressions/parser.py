"""
Tokenizer, recursive-descent parser and pretty printer for objective and
constraint expressions.

Grammar::

    top       := expr [ "for" "all" quantifier ]
    expr      := arith [ cmp-op arith ]
    arith     := term (("+" | "-") term)*
    term      := factor (("*" | "/") factor)*
    factor    := "-" factor | number | call | index | ident | "(" arith ")"
    call      := "sum" "(" arith gen-list ")"
    index     := ident ("[" arith ("," arith)* "]")+
    gen-list  := "for" gen-tail
    gen-tail  := names "in" domain ( ("if" | "with") cond )* [ "for" ["all"] gen-tail ]
    names     := ident ("," ident)*
    domain    := ident | "range" "(" arith ["," arith] ")"
    cond      := arith cond-op arith ("and" arith cond-op arith)*

``cmp-op`` is one of ``<= >= == < >``; ``cond-op`` additionally allows ``!=``.
"""

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import FrozenSet, Iterable, List, Optional, Set, Tuple

from optiloop.exceptions import ExpressionSyntaxError
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

KEYWORDS = frozenset({"sum", "for", "in", "if", "with", "all", "and", "range"})
COMPARISON_OPS = ("<=", ">=", "==", "<", ">")
CONDITION_OPS = COMPARISON_OPS + ("!=",)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
    |(?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
    |(?P<ident>[A-Za-z_][A-Za-z_0-9]*)
    |(?P<op><=|>=|==|!=|[-+*/()\[\],<>])
    """,
    re.VERBOSE,
)

_FACTOR_START = frozenset({"number", "identifier", "sum", "(", "-"})


@dataclass(frozen=True)
class Token:
    kind: str  # number | ident | keyword | op | eof
    text: str
    offset: int  # byte offset into the source text


def tokenize(text: str) -> List[Token]:
    tokens: List[Token] = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise ExpressionSyntaxError(
                f"unexpected character {text[pos]!r}", _byte_offset(text, pos)
            )
        kind = match.lastgroup
        if kind != "ws":
            value = match.group()
            if kind == "ident" and value in KEYWORDS:
                kind = "keyword"
            tokens.append(Token(kind, value, _byte_offset(text, pos)))
        pos = match.end()
    tokens.append(Token("eof", "", _byte_offset(text, len(text))))
    return tokens


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


def _describe(token: Token) -> str:
    if token.kind == "eof":
        return "end of input"
    return f"{token.text!r}"


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.pos = 0

    # token helpers

    def peek(self, ahead: int = 0) -> Token:
        index = min(self.pos + ahead, len(self.tokens) - 1)
        return self.tokens[index]

    def at(self, kind: str, text: Optional[str] = None) -> bool:
        token = self.peek()
        return token.kind == kind and (text is None or token.text == text)

    def at_op(self, ops: Iterable[str]) -> bool:
        token = self.peek()
        return token.kind == "op" and token.text in ops

    def advance(self) -> Token:
        token = self.peek()
        self.pos += 1
        return token

    def accept(self, kind: str, text: Optional[str] = None) -> Optional[Token]:
        if self.at(kind, text):
            return self.advance()
        return None

    def expect(self, kind: str, text: Optional[str] = None, label: Optional[str] = None) -> Token:
        if not self.at(kind, text):
            self.fail({label or text or kind})
        return self.advance()

    def fail(self, expected: Iterable[str], message: Optional[str] = None, token: Optional[Token] = None):
        token = token or self.peek()
        raise ExpressionSyntaxError(message or f"unexpected {_describe(token)}", token.offset, expected)

    # grammar

    def parse_top(self) -> Expr:
        start = self.peek()
        body = self.parse_expr()
        if self.at("keyword", "for"):
            if self.peek(1).kind != "keyword" or self.peek(1).text != "all":
                self.fail({"for all", "end of input"})
            self.advance()
            self.advance()
            if not isinstance(body, Compare):
                self.fail(set(COMPARISON_OPS), "quantified expression must be a comparison", start)
            generators, condition = self.parse_generator_tail(allow_all=True)
            body = ForAll(body, generators, condition)
        if not self.at("eof"):
            expected = {"end of input", "+", "-", "*", "/"}
            if not isinstance(body, (Compare, ForAll)):
                expected.update(COMPARISON_OPS)
            if isinstance(body, Compare):
                expected.add("for all")
            self.fail(expected)
        return body

    def parse_expr(self) -> Expr:
        lhs = self.parse_arith()
        if self.at_op(COMPARISON_OPS):
            op = self.advance().text
            rhs = self.parse_arith()
            return Compare(op, lhs, rhs)
        return lhs

    def parse_arith(self) -> Expr:
        node = self.parse_term()
        while self.at_op(("+", "-")):
            op = self.advance().text
            node = Binary(op, node, self.parse_term())
        return node

    def parse_term(self) -> Expr:
        node = self.parse_factor()
        while self.at_op(("*", "/")):
            op = self.advance().text
            node = Binary(op, node, self.parse_factor())
        return node

    def parse_factor(self) -> Expr:
        token = self.peek()
        if self.accept("op", "-"):
            return Unary(self.parse_factor())
        if token.kind == "number":
            self.advance()
            return Number(float(token.text))
        if self.accept("op", "("):
            inner = self.parse_arith()
            self.expect("op", ")")
            return inner
        if token.kind == "keyword" and token.text == "sum":
            return self.parse_sum()
        if token.kind == "ident":
            self.advance()
            if self.at("op", "("):
                self.fail(_FACTOR_START, f"unsupported function '{token.text}'", token)
            if self.at("op", "["):
                return self.parse_index(token.text)
            return Name(token.text)
        self.fail(_FACTOR_START)

    def parse_index(self, base: str) -> Index:
        subscripts: List[Expr] = []
        while self.accept("op", "["):
            subscripts.append(self.parse_arith())
            while self.accept("op", ","):
                subscripts.append(self.parse_arith())
            self.expect("op", "]")
        return Index(base, tuple(subscripts))

    def parse_sum(self) -> Sum:
        self.expect("keyword", "sum")
        self.expect("op", "(")
        body = self.parse_arith()
        self.expect("keyword", "for")
        generators, condition = self.parse_generator_tail(allow_all=False)
        self.expect("op", ")")
        return Sum(body, generators, condition)

    def parse_generator_tail(self, allow_all: bool) -> Tuple[Tuple[Generator, ...], Optional[Condition]]:
        generators: List[Generator] = []
        clauses: List[Compare] = []
        bound: Set[str] = set()
        while True:
            names = [self.parse_binding_name(bound)]
            while self.accept("op", ","):
                names.append(self.parse_binding_name(bound))
            self.expect("keyword", "in")
            generators.append(Generator(tuple(names), self.parse_domain()))
            while self.at("keyword", "if") or self.at("keyword", "with"):
                self.advance()
                clauses.extend(self.parse_condition())
            if not self.accept("keyword", "for"):
                break
            if allow_all:
                self.accept("keyword", "all")
        condition = Condition(tuple(clauses)) if clauses else None
        return tuple(generators), condition

    def parse_binding_name(self, bound: Set[str]) -> str:
        token = self.expect("ident", label="identifier")
        if token.text in bound:
            self.fail({"identifier"}, f"index '{token.text}' bound twice", token)
        bound.add(token.text)
        return token.text

    def parse_domain(self) -> Domain:
        if self.accept("keyword", "range"):
            self.expect("op", "(")
            first = self.parse_arith()
            if self.accept("op", ","):
                second = self.parse_arith()
                self.expect("op", ")")
                return RangeSet(first, second)
            self.expect("op", ")")
            return RangeSet(Number(0.0), first)
        token = self.peek()
        if token.kind != "ident":
            self.fail({"identifier", "range"})
        self.advance()
        return NamedSet(token.text)

    def parse_condition(self) -> List[Compare]:
        clauses = [self.parse_clause()]
        while self.accept("keyword", "and"):
            clauses.append(self.parse_clause())
        return clauses

    def parse_clause(self) -> Compare:
        lhs = self.parse_arith()
        if not self.at_op(CONDITION_OPS):
            self.fail(set(CONDITION_OPS))
        op = self.advance().text
        return Compare(op, lhs, self.parse_arith())


@lru_cache(maxsize=2048)
def parse_expr(text: str) -> Expr:
    """
    Parse an objective or constraint expression.

    Args:
        text: Python-style expression text

    Returns:
        The expression tree

    Raises:
        ExpressionSyntaxError: with the byte offset of the offending token
            and the set of tokens that would have been accepted there
    """
    if not text or not text.strip():
        raise ExpressionSyntaxError("empty expression", 0, _FACTOR_START)
    return _Parser(text).parse_top()


# pretty printing

_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}
_UNARY_PRECEDENCE = 3
_ATOM_PRECEDENCE = 4


def _precedence(node: Expr) -> int:
    if isinstance(node, Binary):
        return _PRECEDENCE[node.op]
    if isinstance(node, Unary):
        return _UNARY_PRECEDENCE
    return _ATOM_PRECEDENCE


def _format_number(value: float) -> str:
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _format_domain(domain: Domain) -> str:
    if isinstance(domain, RangeSet):
        return f"range({format_expr(domain.start)}, {format_expr(domain.stop)})"
    return domain.name


def _format_generators(generators: Tuple[Generator, ...], condition: Optional[Condition], quantifier: bool) -> str:
    parts = []
    for position, generator in enumerate(generators):
        keyword = "for all" if quantifier and position == 0 else "for"
        parts.append(f"{keyword} {', '.join(generator.names)} in {_format_domain(generator.domain)}")
    if condition is not None:
        parts.append("if " + " and ".join(format_expr(clause) for clause in condition.clauses))
    return " ".join(parts)


def format_expr(node: Expr) -> str:
    """Render a tree back to text that parses to the same tree"""
    if isinstance(node, Number):
        return _format_number(node.value)
    if isinstance(node, Name):
        return node.ident
    if isinstance(node, Index):
        return f"{node.base}[{', '.join(format_expr(s) for s in node.subscripts)}]"
    if isinstance(node, Unary):
        inner = format_expr(node.operand)
        if _precedence(node.operand) < _UNARY_PRECEDENCE:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, Binary):
        precedence = _PRECEDENCE[node.op]
        lhs = format_expr(node.lhs)
        rhs = format_expr(node.rhs)
        if _precedence(node.lhs) < precedence:
            lhs = f"({lhs})"
        if _precedence(node.rhs) <= precedence:
            rhs = f"({rhs})"
        return f"{lhs} {node.op} {rhs}"
    if isinstance(node, Compare):
        return f"{format_expr(node.lhs)} {node.op} {format_expr(node.rhs)}"
    if isinstance(node, Sum):
        return f"sum({format_expr(node.body)} {_format_generators(node.generators, node.condition, False)})"
    if isinstance(node, ForAll):
        return f"{format_expr(node.body)} {_format_generators(node.generators, node.condition, True)}"
    raise TypeError(f"not an expression node: {node!r}")


# static analysis

def _walk(node, bound: FrozenSet[str], names: Set[str], domains: Set[str]) -> None:
    if isinstance(node, Number):
        return
    if isinstance(node, Name):
        if node.ident not in bound:
            names.add(node.ident)
        return
    if isinstance(node, Index):
        if node.base not in bound:
            names.add(node.base)
        for subscript in node.subscripts:
            _walk(subscript, bound, names, domains)
        return
    if isinstance(node, Unary):
        _walk(node.operand, bound, names, domains)
        return
    if isinstance(node, (Binary, Compare)):
        _walk(node.lhs, bound, names, domains)
        _walk(node.rhs, bound, names, domains)
        return
    if isinstance(node, (Sum, ForAll)):
        inner = set(bound)
        for generator in node.generators:
            if isinstance(generator.domain, NamedSet):
                domains.add(generator.domain.name)
            else:
                _walk(generator.domain.start, frozenset(inner), names, domains)
                _walk(generator.domain.stop, frozenset(inner), names, domains)
            inner.update(generator.names)
        scope = frozenset(inner)
        _walk(node.body, scope, names, domains)
        if node.condition is not None:
            for clause in node.condition.clauses:
                _walk(clause, scope, names, domains)
        return
    raise TypeError(f"not an expression node: {node!r}")


def free_identifiers(node: Expr) -> Set[str]:
    """Identifiers referenced as values, excluding generator-bound indices"""
    names: Set[str] = set()
    _walk(node, frozenset(), names, set())
    return names


def domain_names(node: Expr) -> Set[str]:
    """Names of index sets that generators range over"""
    domains: Set[str] = set()
    _walk(node, frozenset(), set(), domains)
    return domains


def contains_comparison(node: Expr) -> bool:
    """True when a comparison or quantifier appears outside generator filters"""
    if isinstance(node, (Compare, ForAll)):
        return True
    if isinstance(node, Unary):
        return contains_comparison(node.operand)
    if isinstance(node, Binary):
        return contains_comparison(node.lhs) or contains_comparison(node.rhs)
    if isinstance(node, Sum):
        return contains_comparison(node.body)
    return False
