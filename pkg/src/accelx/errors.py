"""Exception hierarchy shared by all accelx modules."""


class AccelxError(Exception):
    """Base class for every error raised by accelx."""


class ModelError(AccelxError, ValueError):
    """A network or platform description is malformed or inconsistent.

    ``location`` points at the offending field (``layers[3].k``) or, for JSON
    syntax errors, at ``line:column``.
    """

    def __init__(self, message, location=None):
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)


class DegenerateSplitError(AccelxError, ValueError):
    """The half-split statistic is undefined for this network."""


class InfeasibleError(AccelxError):
    """A plan or allocation does not fit its resource budget.

    ``details`` carries a machine-readable breakdown (per-stage buffer sizes,
    the name of the failing layer, ...).
    """

    def __init__(self, message, details=None):
        self.details = details or {}
        super().__init__(message)


class ModelConsistencyError(AccelxError):
    """An internal invariant of the performance model was violated."""
