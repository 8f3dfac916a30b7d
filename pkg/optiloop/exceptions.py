"""
Error hierarchy shared by every pipeline stage.

Nothing here subclasses ValueError so that pydantic validators let these
errors propagate unchanged instead of folding them into a ValidationError.
"""

from typing import Iterable, Optional


class PipelineError(Exception):
    """Base class for all optiloop errors"""


# decision-model

class MalformedDocument(PipelineError):
    """The document is not well-formed JSON"""


class SchemaViolation(PipelineError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class UndeclaredSymbol(PipelineError):
    def __init__(self, symbol: str, where: str = ""):
        self.symbol = symbol
        suffix = f" (in {where})" if where else ""
        super().__init__(f"undeclared symbol '{symbol}'{suffix}")


# expr-lang

class ExpressionSyntaxError(PipelineError):
    def __init__(self, message: str, offset: int, expected: Iterable[str] = ()):
        self.offset = offset
        self.expected = frozenset(expected)
        detail = ""
        if self.expected:
            detail = f"; expected one of: {', '.join(sorted(self.expected))}"
        super().__init__(f"{message} at offset {offset}{detail}")


class EvaluationError(PipelineError):
    """Raised when an expression cannot be evaluated in an environment"""


class UnboundIdentifier(EvaluationError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unbound identifier '{name}'")


class MissingVariable(UnboundIdentifier):
    """A decision variable referenced by an expression has no assigned value"""


class DivisionByZero(EvaluationError):
    pass


class IndexOutOfRange(EvaluationError):
    pass


# memory-store

class DimensionMismatch(PipelineError):
    pass


class ZeroVector(PipelineError):
    pass


class EmptyStore(PipelineError):
    pass


# mbr-select

class MissingEmbedding(PipelineError):
    pass


class WeightMismatch(PipelineError):
    pass


class JudgeContractViolation(PipelineError):
    pass


# solver-recommender

class ContractViolation(PipelineError):
    pass


# providers

class ProviderError(PipelineError):
    def __init__(self, message: str, entry_index: Optional[int] = None):
        self.entry_index = entry_index
        super().__init__(message)


class ProviderUnavailable(ProviderError):
    pass


class RateLimited(ProviderError):
    """Retryable provider failure"""


class CapExceeded(PipelineError):
    pass


class OptimizerError(PipelineError):
    pass


# asymmetric-validation

class SimulatorGateError(PipelineError):
    def __init__(self, failures: Iterable[str]):
        self.failures = list(failures)
        super().__init__("simulator gate failed: " + "; ".join(self.failures))


# eval-harness

class EmptySuite(PipelineError):
    pass


# orchestrator-cli

class ConfigError(PipelineError):
    pass


class StageError(PipelineError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {message}")
