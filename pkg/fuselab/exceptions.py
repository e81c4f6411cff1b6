"""
Every failure fuselab raises derives from `FuselabError`.  Each class states the process exit
code the command line maps it to, so callers can translate any library failure into the
stable exit contract without knowing every concrete subclass:

    * 1 - validation or domain errors (the inputs are well formed but unusable).
    * 2 - io or parse errors (the inputs could not be read).
    * 3 - numerical failures (the arithmetic itself broke down).
"""
from __future__ import annotations

import typing

if typing.TYPE_CHECKING:
    from fuselab.model import Violation


class FuselabError(Exception):
    exit_code: int = 1


class ScenarioValidationError(FuselabError):
    """
    A scenario parsed cleanly but violates one or more model invariants.
    """

    exit_code = 1

    def __init__(self, violations: typing.Sequence[Violation]) -> None:
        self.violations = tuple(violations)
        rendered = "; ".join(f"{v.code}: {v.message}" for v in self.violations)
        super().__init__(f"invalid scenario: {rendered}")


class DomainError(FuselabError, ValueError):
    exit_code = 1


class ScenarioParseError(FuselabError):
    """
    A scenario file is malformed, misses a required key or carries an unknown one.
    """

    exit_code = 2

    def __init__(self, message: str, key: typing.Optional[str] = None) -> None:
        self.key = key
        super().__init__(message)


class ScenarioIOError(FuselabError, OSError):
    exit_code = 2


class NumericalError(FuselabError, ArithmeticError):
    exit_code = 3


class NumericOverflowError(NumericalError):
    def __init__(self, t: float, h: float) -> None:
        self.t = t
        self.h = h
        super().__init__(f"non-finite value while integrating at t={t!r} with step h={h!r}")


class SingularMatrixError(NumericalError):
    def __init__(self, message: str, sensor: typing.Optional[int] = None) -> None:
        self.sensor = sensor
        super().__init__(message)


class NotPositiveDefiniteError(NumericalError):
    def __init__(self, message: str, sensor: typing.Optional[int] = None) -> None:
        self.sensor = sensor
        super().__init__(message)


class FusionSingularityError(NumericalError):
    pass
