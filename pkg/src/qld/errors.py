"""Exception hierarchy shared by every module."""


class QLDError(Exception):
    """Base class for all errors raised by qld."""


class SingularMatrix(QLDError):
    pass


class NotSkew(QLDError):
    pass


class OrientationViolation(QLDError):
    """det F <= 0 somewhere; ``node`` holds the offending index (or indices)."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class StabilityViolation(QLDError):
    pass


class NoConvergence(QLDError):
    """Raised by the minimizer; carries the best state found and a residual report."""

    def __init__(self, message, state=None, report=None):
        super().__init__(message)
        self.state = state
        self.report = report


class NonUnitNormal(QLDError):
    pass


class OffsetOutsideDomain(QLDError):
    pass


class NoRealRoot(QLDError):
    def __init__(self, message, discriminant=None, marker=None):
        super().__init__(message)
        self.discriminant = discriminant
        self.marker = marker


class SelfIntersection(QLDError):
    pass


class SchemaError(QLDError):
    """Aggregates every violation found while validating a scenario.

    ``violations`` is a list of ``(path, message)`` pairs.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        lines = [f"{p or '<root>'}: {m}" for p, m in self.violations]
        super().__init__("invalid scenario:\n  " + "\n  ".join(lines))


class UnknownKey(SchemaError):
    pass


class UnitInconsistency(SchemaError):
    pass
