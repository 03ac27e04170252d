from __future__ import annotations


class OtwardError(Exception):
    """Base class of every error raised by otward."""

    exit_code = 1


class NumericError(OtwardError, ValueError):
    """An input or intermediate result violates a numerical precondition."""

    exit_code = 3


class FormatError(OtwardError, ValueError):
    """A file could not be parsed."""

    exit_code = 2


class NotSymmetric(NumericError):
    pass


class NotConverged(NumericError):
    pass


class IndefiniteInput(NumericError):
    pass


class DimensionMismatch(NumericError):
    pass


class TooFewSamples(NumericError):
    pass


class DegenerateBandwidth(NumericError):
    pass


class SolverFailure(NumericError):
    pass


class NonPositiveEpsilon(NumericError):
    pass


class EmptyInput(NumericError):
    pass


class DegenerateCleanCosts(NumericError):
    pass


class DivergedLoss(NumericError):
    pass


class WrongKind(NumericError):
    pass


class EpsilonTooSmall(NumericError):
    pass


class AllZero(NumericError):
    pass


class DegenerateInput(NumericError):
    pass


class BadMagic(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class InconsistentHeader(FormatError):
    pass


class ChecksumMismatch(FormatError):
    pass
