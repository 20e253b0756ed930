"""Exception hierarchy.

Errors fall in two families that the command line maps to distinct exit
codes: data problems (bad files, too few points) and numerical problems
(degenerate geometry, non-finite objectives).
"""

from __future__ import annotations

from contextlib import contextmanager


class ArtikinError(Exception):
    """Base class. ``stage`` names the pipeline stage that raised, if known."""

    stage: str | None = None

    def __str__(self) -> str:
        msg = super().__str__()
        if self.stage:
            return f"[{self.stage}] {msg}"
        return msg


class DataError(ArtikinError):
    pass


class ParseError(DataError):
    pass


class SchemaError(DataError):
    pass


class SpecError(DataError):
    pass


class InvalidDepthError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class CannotPropagateError(DataError):
    pass


class NumericalError(ArtikinError):
    pass


class DegenerateInputError(NumericalError):
    pass


class NumericalFailure(NumericalError):
    pass


class CalibrationError(NumericalError):
    pass


class IllConditionedAxisError(NumericalError):
    pass


class IllConditionedPivotError(NumericalError):
    pass


class DegeneratePrismaticError(NumericalError):
    pass


@contextmanager
def stage(name: str):
    """Tag any ArtikinError escaping the block with ``name`` (innermost wins)."""
    try:
        yield
    except ArtikinError as exc:
        if exc.stage is None:
            exc.stage = name
        raise
