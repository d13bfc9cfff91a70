"""Exception hierarchy.

Every error carries the CLI exit code of its class: 1 for usage and
configuration problems, 2 for unparsable input, 3 for numeric failures.
"""


class KpmatchError(Exception):
    exit_code = 1


class UsageError(KpmatchError):
    exit_code = 1


class ParseError(KpmatchError):
    exit_code = 2


class NumericError(KpmatchError):
    exit_code = 3


class ShapeMismatch(UsageError):
    pass


class DimMismatch(ParseError):
    pass


class UnknownTensorName(ParseError):
    pass


class VersionMismatch(ParseError):
    pass


class EmptyMeasurements(ParseError):
    pass


class NonMonotonicTimestamps(ParseError):
    pass


class EmptyDataset(UsageError):
    pass


class EmptyErrors(UsageError):
    pass


class MissingDepth(UsageError):
    pass


class NonSquare(UsageError):
    pass


class NonPositiveDepth(NumericError):
    pass


class DegenerateDivision(NumericError):
    pass


class NonPositiveSigma(NumericError):
    pass


class NonPositiveTemperature(NumericError):
    pass


class NonFiniteLoss(NumericError):
    pass


class InsufficientMatches(NumericError):
    pass
