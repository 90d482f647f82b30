"""Exception types shared across the package."""

from __future__ import annotations


class TrimixError(Exception):
    """Base class for all trimix-specific errors."""


class DataError(TrimixError):
    """Malformed, ragged, or non-finite input data."""


class NotPositiveDefiniteError(TrimixError):
    """A matrix required to be symmetric positive definite is not."""


class ConvergenceError(TrimixError):
    """An iterative solver exhausted its budget or diverged."""


class DegenerateClusterError(TrimixError):
    """A mixture component collapsed (soft count below the floor, or a
    rank-deficient scatter matrix)."""

    def __init__(self, component: int, soft_count: float, floor: float,
                 reason: str | None = None):
        self.component = component
        self.soft_count = soft_count
        self.floor = floor
        if reason is None:
            reason = (f"soft count {soft_count:.4g} is below the floor "
                      f"{floor:.4g}")
        super().__init__(f"component {component} collapsed: {reason}")
