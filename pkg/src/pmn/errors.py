"""Exception hierarchy shared across the package."""


class PMNError(Exception):
    """Base class for all package errors."""


class DimensionError(PMNError, ValueError):
    pass


class ConfigurationError(PMNError, ValueError):
    pass


class ParameterError(PMNError, ValueError):
    pass


class FormatError(PMNError, ValueError):
    pass


class NumericalError(PMNError, ArithmeticError):
    pass


class PreconditionError(PMNError, RuntimeError):
    pass
