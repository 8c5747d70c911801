"""Exception types raised by the library."""


class DHDistanceError(Exception):
    """Base class for all library errors."""


class InputError(DHDistanceError, ValueError):
    """Malformed input (dimensions, structure, files)."""


class EvenDimension(InputError):
    pass


class OddDimension(InputError):
    pass


class DegenerateInput(InputError):
    pass


class NumericalFailure(DHDistanceError):
    """A numerical procedure failed to produce a usable result."""


class DegenerateEigenvalue(NumericalFailure):
    """An extremal eigenvalue needed for a derivative is not simple."""

    def __init__(self, message, which=None, gap=None):
        super().__init__(message)
        self.which = which
        self.gap = gap


class StalledFlow(NumericalFailure):
    """No step above ``h_min`` decreased the functional."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class SNearSingular(NumericalFailure):
    """A rank-2 core factor lost rank."""


class NoUpperBracket(NumericalFailure):
    """The outer iteration could not find an epsilon with f(epsilon) <= tol."""
