"""Exception types shared across the package."""


class PreconditionError(ValueError):
    """Inputs violate an operation's stated precondition."""


class QuadratureError(ArithmeticError):
    """Gauss-Hermite quadrature did not converge."""


class ResourceGuardError(MemoryError):
    """A dense object would exceed the configured size guard."""


class InfeasibleError(RuntimeError):
    """A constructive procedure could not produce an object meeting its constraints."""
