"""Exception hierarchy.

Errors split into two families because the CLI maps them to different exit
codes: ``UsageError`` subclasses (bad parameters, incompatible options) exit
with 1, ``NumericalError`` subclasses exit with 2.
"""


class CbiError(Exception):
    """Base class for all package errors."""


class UsageError(CbiError, ValueError):
    """Invalid input supplied by the caller."""


class NumericalError(CbiError, ArithmeticError):
    """A computation could not produce a trustworthy number."""


class ParameterError(UsageError):
    pass


class InvalidConfig(UsageError):
    pass


class ConfigError(UsageError):
    pass


class RequiresPureImmigration(UsageError):
    pass


class DegenerateImmigration(UsageError):
    pass


class NonFinite(NumericalError):
    pass


class StepTooCoarse(NumericalError):
    pass


class DegenerateDiffusion(NumericalError):
    pass


class DegenerateDenominator(NumericalError):
    pass


class MissingEstimate(NumericalError):
    pass
