"""Exception hierarchy shared by every module of the package."""


class SlcurvError(Exception):
    """Base class for all package errors."""


class NonFinite(SlcurvError, ValueError):
    pass


class DegenerateArrow(SlcurvError, ValueError):
    pass


class SolveFailed(SlcurvError, RuntimeError):
    pass


class PhaseOutOfRange(SlcurvError, ValueError):
    pass


class NotSorted(SlcurvError, ValueError):
    pass


class SamplerStalled(SlcurvError, RuntimeError):
    pass


class LeftCone(SlcurvError, ValueError):
    pass


class CalibrationFailed(SlcurvError, RuntimeError):
    pass


class ConeBoundary(SlcurvError, ValueError):
    pass


class BoundaryNode(SlcurvError, IndexError):
    pass


class MarginTooSmall(SlcurvError, ValueError):
    pass


class InadmissibleIterate(SlcurvError, RuntimeError):
    """Raised when some interior node leaves the admissible cone.

    ``nodes`` holds the offending ``(i, j)`` grid indices.
    """

    def __init__(self, message, nodes=()):
        super().__init__(message)
        self.nodes = list(nodes)


class LineSearchFailed(SlcurvError, RuntimeError):
    pass


class NotConverged(SlcurvError, RuntimeError):
    """Newton iteration hit its cap; ``best`` is the lowest-residual iterate."""

    def __init__(self, message, best=None, history=None):
        super().__init__(message)
        self.best = best
        self.history = history or []


class HomotopyStalled(SlcurvError, RuntimeError):
    def __init__(self, message, report=None, u=None):
        super().__init__(message)
        self.report = report
        self.u = u


class ParseError(SlcurvError, ValueError):
    pass


class ValidationError(SlcurvError, ValueError):
    pass
