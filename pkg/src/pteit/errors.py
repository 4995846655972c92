"""Exception hierarchy shared across the package."""


class EITError(Exception):
    """Base class for every error raised by pteit."""


class NumericalError(EITError):
    """Failure of a numerical routine (solve, factorization, iteration)."""


class ConfigError(EITError, ValueError):
    """Invalid user-supplied parameter or configuration."""


class SingularMatrix(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class DimensionMismatch(EITError, ValueError):
    pass


class InvalidParam(ConfigError):
    pass


class DegenerateElement(NumericalError):
    pass


class NoElectrodes(ConfigError):
    pass


class CapExceeded(ConfigError):
    pass


class SourceOnBoundary(NumericalError):
    pass


class InvalidContrast(ConfigError):
    pass


class MissingField(EITError):
    pass


class NonPositiveDiagonal(NumericalError):
    pass


class CurvatureViolation(NumericalError):
    pass


class LineSearchFailed(NumericalError):
    """Raised when no acceptable step is found; carries the partial run if any."""

    def __init__(self, msg, run=None):
        super().__init__(msg)
        self.run = run
