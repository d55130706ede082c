"""Exception hierarchy for the lineage engine."""

from __future__ import annotations


class EngineError(Exception):
    """Base class for every error raised by this package."""


class PipelineSyntaxError(EngineError):
    """Malformed pipeline document or expression text."""


class ValidationError(EngineError):
    """Structurally well-formed input that violates a semantic constraint."""


class CsvError(EngineError):
    """CSV cell that cannot be parsed as its declared kind."""

    def __init__(self, message: str, row: int | None = None, col: str | None = None):
        if row is not None:
            message = f"{message} (row {row}, column {col})"
        super().__init__(message)
        self.row = row
        self.col = col


class ExecError(EngineError):
    """Runtime failure while evaluating an operator (division by zero etc.)."""

    def __init__(self, message: str, op_id: str | None = None, pos: int | None = None):
        if op_id is not None:
            message = f"{message} (operator {op_id}, row {pos})"
        super().__init__(message)
        self.op_id = op_id
        self.pos = pos


class UnboundParameterError(EngineError):
    """A predicate was evaluated with a parameter or set variable left unbound."""


class UnsupportedExprError(EngineError):
    """Expression outside the verifier's theory; callers treat as non-verified."""


class PlanError(EngineError):
    """Inconsistent or unusable lineage plan."""


class OutputRowNotFoundError(EngineError):
    """The queried row is not present in the pipeline output."""


class MissingIntermediateError(EngineError):
    """A materialized intermediate required by the plan is not available."""


class ConcretizationLimitError(PlanError):
    """Cross product of intermediate matches exceeded the disjunct cap."""


class SizeLimitError(EngineError):
    """Oracle input exceeds the exhaustive-enumeration bound."""


class IterationCapWarning(UserWarning):
    """Refinement stopped at the iteration cap before reaching a fixpoint."""
