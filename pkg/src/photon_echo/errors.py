"""Exception types raised by the simulator."""


class InvalidParameterError(ValueError):
    """A parameter is outside the domain an operation accepts."""


class NumericalFailureError(ArithmeticError):
    """A quadrature or simulation produced a non-finite value."""


class UndefinedRatioError(ZeroDivisionError):
    """A ratio observable was requested with a zero denominator."""
