"""Exception hierarchy shared by all modules."""


class SpecSenseError(Exception):
    """Base class for every error raised by this package."""


class InsufficientSamples(SpecSenseError, ValueError):
    pass


class IndexOutOfRange(SpecSenseError, IndexError):
    pass


class DimensionMismatch(SpecSenseError, ValueError):
    pass


class EmptyInput(SpecSenseError, ValueError):
    pass


class NotSymmetric(SpecSenseError, ValueError):
    pass


class NotConverged(SpecSenseError, RuntimeError):
    pass


class DomainError(SpecSenseError, ValueError):
    pass


class TooFewSubSegments(SpecSenseError, ValueError):
    pass


class SingularCovariance(SpecSenseError, ArithmeticError):
    pass


class TooFewTrials(SpecSenseError, ValueError):
    pass


class NotBracketed(SpecSenseError, ValueError):
    pass


class ConfigError(SpecSenseError, ValueError):
    pass
