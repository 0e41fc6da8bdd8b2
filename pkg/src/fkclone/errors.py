"""Exception hierarchy shared by every module of the package."""


class FkcloneError(Exception):
    """Base class for all package errors."""


class ModelError(FkcloneError, ValueError):
    """Problem with the definition of a jump model."""


class MalformedSpec(ModelError):
    pass


class ZeroEscapeRate(ModelError):
    pass


class UnknownModel(ModelError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class BadParams(ModelError):
    pass


class NumericError(FkcloneError, ArithmeticError):
    """A computation left the range where its result can be trusted."""


class NonFinite(NumericError):
    pass


class Overflow(NumericError):
    pass


class NotIrreducible(NumericError):
    pass


class NoGap(NumericError):
    pass


class StepTooCoarse(NumericError):
    pass


class MeanTooLarge(NumericError):
    pass


class RangeError(FkcloneError, ValueError):
    """A requested time or window lies outside the recorded data."""


class EnsembleTooSmall(FkcloneError, ValueError):
    pass


class InsufficientReplicas(FkcloneError, ValueError):
    pass
