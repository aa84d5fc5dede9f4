"""Exception and warning types raised across the package."""


class CtbnError(Exception):
    """Base class for all errors raised by ctbn_au."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line

    @property
    def kind(self):
        return type(self).__name__


class NonSquare(CtbnError):
    pass


class NegativeOffDiagonal(CtbnError):
    pass


class RowSumViolation(CtbnError):
    pass


class AbsorbingState(CtbnError):
    pass


class StateSpaceTooLarge(CtbnError):
    pass


class OutOfRange(CtbnError):
    pass


class ModelError(CtbnError):
    """Structural problem with a model (bad parents, missing CIMs, ...)."""


class UnknownVariable(CtbnError):
    pass


class MalformedTrajectory(CtbnError):
    pass


class IncompleteData(CtbnError):
    pass


class EmptyData(CtbnError):
    pass


class EvidenceGap(CtbnError):
    pass


class ZeroLikelihoodEvidence(CtbnError):
    pass


class NoCodec(CtbnError):
    pass


class UnknownAuName(CtbnError):
    pass


class UnknownPhoneme(CtbnError):
    pass


class OverlappingSegments(CtbnError):
    pass


class NegativeDuration(CtbnError):
    pass


class LengthMismatch(CtbnError):
    pass


class ParseError(CtbnError):
    pass


class ZeroDwellWarning(UserWarning):
    """A state/context pair had no dwell time, so its rate was set to zero."""


class NonErgodicWarning(UserWarning):
    """A hidden node can get stuck in an absorbing state under some context."""
