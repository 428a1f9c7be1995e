"""Exception hierarchy shared by all knotflow modules."""


class KnotFlowError(Exception):
    """Base class for all errors raised by knotflow."""


class ParameterError(KnotFlowError, ValueError):
    """A parameter violates its admissible range.

    The message names the violated inequality.
    """


class BadShapeParams(ParameterError):
    pass


class CurveFormatError(KnotFlowError, ValueError):
    pass


class GeometryError(KnotFlowError):
    """The curve is not regular or not embedded."""


class NonRegular(GeometryError):
    pass


class ZeroSpeed(NonRegular):
    pass


class CoincidentPoints(GeometryError):
    pass


class MonitorTripped(KnotFlowError):
    def __init__(self, message, name=None, value=None, floor=None):
        super().__init__(message)
        self.name = name
        self.value = value
        self.floor = floor


class StepFailure(KnotFlowError):
    pass


class NonConvergence(KnotFlowError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
