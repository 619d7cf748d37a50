"""Exception types raised across the package."""


class KarmaError(Exception):
    """Base class for pipeline errors reported to users."""


class ParseError(KarmaError):
    def __init__(self, reason, line=None, column=None):
        self.line = line
        self.column = column
        self.reason = reason
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + reason)


class InvariantViolation(KarmaError):
    pass


class UnknownBattery(KarmaError):
    pass


class SpOutOfRange(KarmaError):
    pass


class SignalTooShort(KarmaError):
    pass


class NonFiniteInput(KarmaError):
    pass


class EmptySearchSpace(KarmaError):
    pass


class SequenceTooShort(KarmaError):
    pass


class WindowTooLong(KarmaError):
    pass


class ConstantChannel(KarmaError):
    pass


class ShapeMismatch(KarmaError):
    pass


class EmptyDataset(KarmaError):
    pass


class DivergedLoss(KarmaError):
    pass


class TooFewPoints(KarmaError):
    pass


class NonFiniteParams(KarmaError):
    pass


class BadCovariance(KarmaError):
    pass


class UnnormalizedWeights(KarmaError):
    pass


class LengthMismatch(KarmaError):
    pass


class EmptyInput(KarmaError):
    pass


class ZeroGroundTruth(KarmaError):
    pass


class ModelInputMismatch(KarmaError):
    pass


class ChecksumError(KarmaError):
    pass
