"""Exception hierarchy. Every error raised by the library derives from DDNNError."""


class DDNNError(Exception):
    pass


class QueryBeyondTrajectory(DDNNError):
    pass


class StepExceedsDelay(DDNNError):
    pass


class MaxStepsExceeded(DDNNError):
    pass


class StepUnderflow(DDNNError):
    pass


class NonFiniteState(DDNNError):
    pass


class DimensionMismatch(DDNNError, ValueError):
    pass


class NonFiniteOutput(DDNNError):
    pass


class StaleCache(DDNNError):
    pass


class ObservationNotOnKnot(DDNNError):
    pass


class NonFiniteGradient(DDNNError):
    pass


class EmptySplit(DDNNError):
    pass


class TimeMismatch(DDNNError):
    pass
