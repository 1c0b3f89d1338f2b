"""Exception hierarchy.

Every error raised on purpose by the library derives from ``TunnelTimeError``;
the CLI maps the two main families onto exit codes (configuration -> 2,
numerical -> 3).
"""


class TunnelTimeError(Exception):
    pass


class ConfigurationError(TunnelTimeError, ValueError):
    """Invalid parameters, grids or plans."""


class DomainError(TunnelTimeError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class NumericalError(TunnelTimeError, ArithmeticError):
    """A computation ran but its result cannot be trusted."""


class ResolutionError(NumericalError):
    pass


class NumericalQualityError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass


class InstabilityError(NumericalError):
    def __init__(self, message, step=None, max_amplitude=None):
        super().__init__(message)
        self.step = step
        self.max_amplitude = max_amplitude


class InconclusiveRunError(NumericalError):
    pass


class CalibrationError(NumericalError):
    pass


class DegenerateStatisticsError(NumericalError):
    pass


class SaturationError(DomainError):
    pass


class UndefinedPhaseError(DomainError):
    pass


class FitError(NumericalError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class UnidentifiableFitError(FitError):
    pass


class NonPhysicalInputError(DomainError):
    pass


class ParseError(ConfigurationError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
