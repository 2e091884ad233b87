"""
Exception types raised across the lab.

Every error derives from a builtin as well, so callers that only care about the
broad category (bad input vs. numerical failure) can catch ValueError or
ArithmeticError instead of the lab-specific class.
"""

from typing import Any


class LabError(Exception):
    """Base class for all lab errors."""


class ValidationError(LabError, ValueError):
    """
    A configuration or input object violates a structural hypothesis.

    Attributes:
        subject: The offending object (map, hole, schedule entry, ...), if any.
    """

    def __init__(self, message: str, subject: Any = None):
        super().__init__(message)
        self.subject = subject


class NumericalError(LabError, ArithmeticError):
    """Base class for numerical failures (non-convergence, degenerate sets)."""


class ConvergenceError(NumericalError):
    """
    An iterative estimate did not settle within its budget.

    Attributes:
        fiber: Fiber index at which the estimate was requested.
        step: Sweep step (or iteration) at which the failure was detected.
        distance: Last measured distance between successive iterates.
    """

    def __init__(
        self,
        message: str,
        fiber: int | None = None,
        step: int | None = None,
        distance: float | None = None,
    ):
        super().__init__(message)
        self.fiber = fiber
        self.step = step
        self.distance = distance

    def __str__(self) -> str:
        parts = [super().__str__()]
        if self.fiber is not None:
            parts.append(f"fiber={self.fiber}")
        if self.step is not None:
            parts.append(f"step={self.step}")
        if self.distance is not None:
            parts.append(f"distance={self.distance:.3e}")
        return " ".join(parts)


class EmptySurvivorError(NumericalError):
    """The survivor set became empty inside the fiber window [start, stop]."""

    def __init__(self, start: int, stop: int):
        super().__init__(f"Survivor set is empty on fiber window [{start}, {stop}]")
        self.start = start
        self.stop = stop


class ZeroHoleMeasureError(NumericalError, ZeroDivisionError):
    """The hole has zero measure at this fiber, so return ratios are undefined."""

    def __init__(self, fiber: int):
        super().__init__(f"omega not in Omega_+ at this epsilon (fiber={fiber})")
        self.fiber = fiber


class ComponentLimitError(NumericalError):
    """An interval set grew past its component budget."""

    def __init__(self, fiber: int, components: int, limit: int):
        super().__init__(
            f"Interval set at fiber {fiber} has {components} components (limit {limit})"
        )
        self.fiber = fiber
        self.components = components
        self.limit = limit
