"""Exception types raised across the pipeline."""


class DrivePredError(Exception):
    """Base class for all package errors."""


# track / labels
class EmptyTrack(DrivePredError, ValueError):
    pass


class NonPositiveLength(DrivePredError, ValueError):
    pass


class IllegalAdjacency(DrivePredError, ValueError):
    pass


class OutOfTrack(DrivePredError, ValueError):
    pass


# simulator
class InvalidSpec(DrivePredError, ValueError):
    pass


class Unreachable(DrivePredError, ValueError):
    pass


class LengthMismatch(DrivePredError, ValueError):
    pass


class Empty(DrivePredError, ValueError):
    pass


# features
class DegenerateVector(DrivePredError, ValueError):
    pass


class SeriesTooShort(DrivePredError, ValueError):
    pass


# models
class ShapeMismatch(DrivePredError, ValueError):
    pass


class EmptyDataset(DrivePredError, ValueError):
    pass


class TooFewSamples(DrivePredError, ValueError):
    pass


class NoTransitions(DrivePredError, ValueError):
    pass


# evaluation
class ClassTooSmall(DrivePredError, ValueError):
    pass


class InsufficientSubjects(DrivePredError, ValueError):
    pass


class EmptyReport(DrivePredError, ValueError):
    pass


# persistence / cli
class FormatVersionMismatch(DrivePredError):
    pass


class CorruptFile(DrivePredError):
    pass


class MissingData(DrivePredError):
    pass


class MissingCheckpoint(DrivePredError):
    pass


class InvalidConfig(DrivePredError, ValueError):
    pass
