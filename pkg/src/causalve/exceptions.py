"""Exception types raised across the package."""


class CohortError(ValueError):
    """Input data violate a record or schema invariant."""


class EstimationError(RuntimeError):
    """A numerical estimation step could not produce a valid result."""


class ConvergenceError(EstimationError):
    """Newton-Raphson iterations failed (singular information or separation)."""
