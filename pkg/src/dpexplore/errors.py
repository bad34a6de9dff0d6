"""Exception types shared across the engine.

Every error that can cross the API boundary maps to a stable HTTP status:
validation problems (schema, divisions, correlations, intents) are 400,
progress-floor violations are 409, and budget exhaustion is 402.
"""


class DpExploreError(Exception):
    """Base class for all engine errors."""


class MalformedFile(DpExploreError):
    """A data table or schema sidecar could not be parsed."""


class SchemaViolation(DpExploreError):
    """A record value falls outside its attribute's declared domain."""


class UnknownAttribute(DpExploreError):
    """An attribute name does not exist in the schema."""


class DuplicateAttribute(DpExploreError):
    """The same attribute was named twice where distinct ones are required."""


class InvalidDivision(DpExploreError):
    """A set division violates disjointness, coverage or lattice alignment."""


class BudgetExceeded(DpExploreError):
    """A charge would drive the remaining privacy budget negative."""


class InvalidCorrelation(DpExploreError):
    """A rank-correlation value lies outside [-1, 1] or the matrix is malformed."""


class InvalidMarginal(DpExploreError):
    """A probability vector is negative, mis-sized or does not sum to one."""


class TargetNotCovered(DpExploreError):
    """An accuracy target references attributes absent from the request."""


class DuplicateEdge(DpExploreError):
    """An intent edge (or self-loop) that is already present was added."""


class ProgressBelowFloor(DpExploreError):
    """A progress estimate below the spent-budget floor was submitted."""


class ProgressAboveOne(DpExploreError):
    """A progress estimate above 100% was submitted."""


class NoFeasibleAction(DpExploreError):
    """No request fits in the remaining privacy budget."""
