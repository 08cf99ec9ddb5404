"""Exception hierarchy shared by all modules.

Everything raised on purpose derives from :class:`NipError`.  Errors that
signal a numerical breakdown derive from :class:`NumericalError` so the CLI
can map them to their own exit code.
"""


class NipError(Exception):
    pass


class NumericalError(NipError):
    pass


# orbit store / file formats
class ShapeMismatch(NipError):
    pass


class ValidationError(NipError):
    pass


class NotFound(NipError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class CorruptStore(NipError):
    pass


class ParseError(NipError, ValueError):
    pass


# pooling
class EmptyOrbit(NipError, ValueError):
    pass


class DomainError(NipError, ValueError):
    pass


class AxisReused(NipError):
    pass


# postproc / hashing
class DimError(NipError, ValueError):
    pass


class DegenerateData(NumericalError):
    pass


class NumericalDivergence(NumericalError):
    pass


class OracleTooLarge(NipError):
    pass


# evaluation
class MetricError(NipError, ValueError):
    pass
