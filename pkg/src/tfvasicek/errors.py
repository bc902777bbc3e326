"""Exception hierarchy shared by the library and the command line."""


class TfvError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(TfvError, ValueError):
    """A parameter or configuration violates a documented constraint."""


class NumericalError(TfvError, ArithmeticError):
    """A numerical routine could not reach its accuracy contract."""


class FallbackRequired(NumericalError):
    """The requested route is outside its accuracy window; use the alternative route."""


class FactorizationError(NumericalError):
    """Cholesky factorization failed even after jitter escalation."""


class DegenerateDenominatorError(NumericalError):
    """The least-squares denominator vanished (constant or near-constant path)."""


class QuadratureError(NumericalError):
    """Adaptive quadrature failed to converge."""
