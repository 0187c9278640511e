"""Exception types shared across the package."""

from __future__ import annotations


class DomainError(ValueError):
    """An argument lies outside the domain where the operation is defined."""


class QuadratureError(ArithmeticError):
    """A quadrature did not reach the requested tolerance.

    Parameters
    ----------
    message : str
        Human readable description.
    estimate : float
        The achieved (relative) error estimate when the routine gave up.
    value : float, optional
        The best value available at the time of failure.
    """

    def __init__(self, message: str, estimate: float, value: float = float("nan")):
        super().__init__(f"{message} (error estimate {estimate:.3g})")
        self.estimate = estimate
        self.value = value


class StepBudgetExceeded(RuntimeError):
    """A simulated path used more Euler steps than its budget allows.

    The partial state of the path is attached so callers can report it.
    """

    def __init__(self, message: str, time: float, position: float, steps: int):
        super().__init__(f"{message}: t={time:.6g}, x={position:.6g}, steps={steps}")
        self.time = time
        self.position = position
        self.steps = steps


class RejectionBudgetExceeded(RuntimeError):
    """A rejection sampler exhausted its number of allowed trials."""
