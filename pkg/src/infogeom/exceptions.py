"""Exception and warning types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument has the wrong shape, range or type."""


class UnsupportedConfigurationError(ValueError):
    """The requested configuration is outside what the method supports."""


class ConfigError(ValueError):
    """An experiment configuration failed validation."""


class InvalidStateError(ArithmeticError):
    """An iterate violated a precondition (e.g. a nonpositive precision)."""


class DivergenceError(RuntimeError):
    """An iterative method produced a non-finite or exploding iterate.

    Parameters
    ----------
    message : str
        Human readable description.
    iteration : int
        Index of the iteration at which divergence was detected.
    """

    def __init__(self, message, iteration):
        super().__init__(message)
        self.iteration = iteration


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap before meeting tolerance.

    Parameters
    ----------
    message : str
        Human readable description.
    last : object
        The last iterate or estimate, kept for diagnosis.
    """

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class RunError(RuntimeError):
    """An experiment produced no usable trial at all."""


class NumericalConditioningWarning(RuntimeWarning):
    """A linear system was solved but is badly conditioned."""
