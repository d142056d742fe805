"""Exception hierarchy.

`ValidationError` covers every invariant/schema violation on user-supplied
data (CLI exit code 2); the remaining classes signal runtime conditions
(exit code 3).
"""
from __future__ import annotations


class KoopguideError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(KoopguideError):
    """A config, file, or argument violates a documented invariant."""


class SchemaError(ValidationError):
    """A serialized artifact does not match its expected schema/version."""


class BarrierDomainError(KoopguideError):
    """Log-barrier queried at a point with non-positive clearance."""


class FollowerTrappedError(KoopguideError):
    """No grid candidate keeps the follower safe; the episode cannot continue."""


class RankDeficiencyError(KoopguideError):
    """Least-squares regressor lacks full column rank."""

    def __init__(self, rank: int, needed: int, dimension: int):
        self.rank = rank
        self.needed = needed
        self.dimension = dimension
        super().__init__(
            f"regressor rank {rank} < {needed}; weakest direction is input dimension {dimension}"
        )


class IterationLimitError(KoopguideError):
    """Solver hit its iteration budget; carries the best iterate found."""

    def __init__(self, message: str, solution):
        self.solution = solution
        super().__init__(message)


class CallbackError(KoopguideError):
    """A user callback failed during a solve; carries the last good iterate."""

    def __init__(self, message: str, solution):
        self.solution = solution
        super().__init__(message)
