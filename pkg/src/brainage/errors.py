"""Exception hierarchy.

Every error raised by the package derives from :class:`BrainAgeError`. The
three intermediate classes group errors by how a batch caller should react;
the command line maps them to exit codes 1, 2 and 3.
"""


class BrainAgeError(Exception):
    """Base class for all package errors."""


class UsageError(BrainAgeError, ValueError):
    """Caller passed arguments that violate an operation's preconditions."""


class DataError(BrainAgeError, ValueError):
    """Input data or file contents are malformed or unusable."""


class NumericError(BrainAgeError, ArithmeticError):
    """A computation produced non-finite values."""


# nifti
class BadMagic(DataError):
    pass


class BadHeader(DataError):
    pass


class UnsupportedDatatype(DataError):
    pass


class Truncated(DataError):
    pass


class NonFinite(NumericError):
    pass


class IoFailure(DataError):
    pass


# preprocess
class EmptyInput(DataError):
    pass


class AllZeroVolume(DataError):
    pass


class DegenerateVolume(DataError):
    pass


class KTooLarge(UsageError):
    pass


class TargetTooLarge(UsageError):
    pass


# augment / engine
class BadAxis(UsageError):
    pass


class ShapeMismatch(UsageError):
    pass


class BadProbability(UsageError):
    pass


class EmptyBatch(UsageError):
    pass


class NoGraph(UsageError):
    pass


class MissingGradient(UsageError):
    pass


class EpochOutOfRange(UsageError):
    pass


class BadCheckpoint(DataError):
    pass


# models
class BadSpec(UsageError):
    pass


class WrongSliceCount(DataError):
    pass


# pipeline
class EmptyManifest(DataError):
    pass


class EmptySplit(DataError):
    pass


class BadRange(UsageError):
    pass


class DivergedLoss(NumericError):
    pass
