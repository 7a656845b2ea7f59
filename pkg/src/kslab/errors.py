"""Exception hierarchy shared by all kslab modules."""


class KslabError(Exception):
    """Base class for all kslab errors."""


class InvalidArgumentError(KslabError, ValueError):
    pass


class InvalidMaskError(KslabError, ValueError):
    pass


class InfeasibleAccelerationError(KslabError, ValueError):
    """Raised when no mask of the requested family reaches the target acceleration.

    Attributes:
        nearest_acceleration: closest acceleration the generator could produce,
            or ``None`` when it is not meaningful.
    """

    def __init__(self, message, nearest_acceleration=None):
        super().__init__(message)
        self.nearest_acceleration = nearest_acceleration


class NumericalDivergenceError(KslabError, ArithmeticError):
    """Raised when an iterative method produces non-finite values.

    Attributes:
        last_finite_iteration: index of the last iteration whose state was finite.
    """

    def __init__(self, message, last_finite_iteration=None):
        super().__init__(message)
        self.last_finite_iteration = last_finite_iteration


class TensorFormatError(KslabError, ValueError):
    pass
