"""
Defines errors raised by the analysis pipeline.

Every error is a dataclass carrying a human-readable ``message`` plus the
context needed to act on it. The command line maps the three families to exit
codes: :py:class:`UsageError` to 1, :py:class:`DataError` to 2 and
:py:class:`FitError` to 3.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional


@dataclass
class DurascaleError(Exception):
    message: str

    def __str__(self) -> str:
        return self.message


@dataclass
class UsageError(DurascaleError):
    pass


@dataclass
class DataError(DurascaleError):
    pass


@dataclass
class MalformedRow(DataError):
    row: int
    column: str
    value: str


@dataclass
class EmptyTape(DataError):
    pass


@dataclass
class DegenerateSeries(DataError):
    source: Any


@dataclass
class EmptyInput(DataError):
    pass


@dataclass
class TooFewEnsembles(DataError):
    count: int


@dataclass
class TooFewSamples(DataError):
    count: int
    required: int


@dataclass
class DegenerateSample(DataError):
    pass


@dataclass
class InsufficientBins(DataError):
    occupied: int
    required: int


@dataclass
class EmptyGroup(DataError):
    group: int


@dataclass
class LineageMismatch(DataError):
    expected: str
    found: str


@dataclass
class MixedEstimators(DataError):
    first: str
    second: str


@dataclass
class DomainError(DataError):
    value: float


@dataclass
class ParamError(DataError):
    parameter: str
    value: Any


@dataclass
class FitError(DurascaleError):
    pass


@dataclass
class ConvergenceError(FitError):
    value: float
    tolerance: float


@dataclass
class NonConvergence(FitError):
    partial: Optional[Any] = None


@dataclass
class TailTooLight(FitError):
    fallback: Any
    log_likelihood: float
