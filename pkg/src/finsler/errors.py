"""Exception types shared across the package."""
from .jets import DomainError
from .expr import ParseError


class FinslerError(Exception):
    """Base class for geometric failures."""


class ConeViolation(FinslerError, ValueError):
    """A direction lies outside the admissible cone of the metric."""


class DegenerateMetric(FinslerError, ArithmeticError):
    """The fundamental tensor is (numerically) singular."""


class ConeExit(FinslerError):
    """An integrated trajectory left the admissible cone."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t={time:.17g}")
        self.time = time


class DegenerateFlag(FinslerError, ArithmeticError):
    """The flag (v, w) spans no plane for the fundamental tensor."""


__all__ = [
    "DomainError",
    "ParseError",
    "FinslerError",
    "ConeViolation",
    "DegenerateMetric",
    "ConeExit",
    "DegenerateFlag",
]
