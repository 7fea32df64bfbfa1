"""Exception types shared across the library.

Every failure the library raises deliberately derives from SimnetError so
callers (and the CLI) can map error classes to exit codes without string
matching.
"""


class SimnetError(Exception):
    """Base class for all library errors."""


class ConfigurationError(SimnetError, ValueError):
    """Invalid or inconsistent configuration input."""


class GeometryError(SimnetError, ValueError):
    """Physically impossible geometry, e.g. coincident radiating elements."""


class SolverFailureError(SimnetError):
    """A linear system could not be solved reliably."""

    def __init__(self, message, condition_estimate=None):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class CellSingularityError(SolverFailureError):
    """A 2x2 cell block is singular. Carries the offending 1-based cell index."""

    def __init__(self, cell_index, message=None):
        super().__init__(message or f"cell block {cell_index} is singular")
        self.cell_index = cell_index


class FactorizationError(SolverFailureError):
    """A pivot block in the block-tridiagonal factorization is near singular."""

    def __init__(self, block_index, rcond):
        super().__init__(
            f"pivot block {block_index} is numerically singular "
            f"(reciprocal condition {rcond:.3e})",
            condition_estimate=None if rcond == 0 else 1.0 / rcond,
        )
        self.block_index = block_index
        self.rcond = rcond


class InfeasibleCandidateError(SimnetError):
    """A discrete candidate state cannot be evaluated (singular update pivot)."""


class EstimationError(SimnetError):
    """Parameter estimation cannot proceed, e.g. an all-zero observation."""


class TouchstoneError(SimnetError, ValueError):
    """Malformed Touchstone file. Carries the 1-based offending line number."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number
