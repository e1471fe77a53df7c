"""Exception hierarchy shared by the solvers, estimators and the CLI.

Every exception carries an ``exit_code`` so the command-line front-end can map
failures to stable process exit statuses.
"""


class GecalError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InvalidParams(GecalError, ValueError):
    """Entropy parameters are missing, extraneous or out of range."""

    exit_code = 4


class DomainError(GecalError, ValueError):
    """A point lies outside the open set on which a function is defined."""

    exit_code = 6


class CalibrationError(GecalError):
    """A calibration solve failed."""

    exit_code = 5


class SingularHessian(CalibrationError):
    """The dual Hessian (or a regression Gram matrix) is numerically singular."""

    def __init__(self, message: str, condition: float = float("inf")):
        super().__init__(message)
        self.condition = condition


class Nonconvergence(CalibrationError):
    """Newton iterations hit the cap or the line search stalled."""


class InfeasibleStart(CalibrationError):
    """No dual vector keeps every linear predictor inside the image of ``g``."""


class BracketFailure(CalibrationError):
    """No sign change of the profile derivative was found."""


class EmptyNeighborhood(GecalError, ArithmeticError):
    """All kernel weights underflowed at some query point."""

    exit_code = 5


class EmptySample(GecalError):
    """A Poisson draw selected no units."""

    exit_code = 5


class InputError(GecalError, ValueError):
    """Malformed input file or configuration."""

    exit_code = 3


class ConfigError(InputError):
    """Simulation configuration failed schema validation."""

    exit_code = 7

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
