"""Exception hierarchy shared across the package."""


class FluxDistError(Exception):
    """Base class for all package errors."""


class ParameterError(FluxDistError, ValueError):
    """Parameters outside the broken-Pareto parameter space."""


class DomainError(FluxDistError, ValueError):
    """Argument outside the domain of a function."""


class EmptySegmentError(FluxDistError, ValueError):
    """A breakpoint segment contains no observations."""


class FitError(FluxDistError, RuntimeError):
    """An estimation routine could not produce a valid fit.

    ``last_theta`` carries the last valid parameter iterate, if any.
    """

    def __init__(self, message, last_theta=None):
        super().__init__(message)
        self.last_theta = last_theta


class NumericalError(FluxDistError, ArithmeticError):
    """A computation produced a non-finite value despite safeguards."""


class BootstrapError(FluxDistError, RuntimeError):
    """Every bootstrap replicate failed."""


class DataError(FluxDistError, ValueError):
    """Malformed input data file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
