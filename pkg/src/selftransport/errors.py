"""Exception types shared across the package."""


class SelfTransportError(Exception):
    """Base class for all package errors."""


class ParseError(SelfTransportError):
    """Malformed membrane description file."""


class ValidationError(SelfTransportError):
    """A membrane condition is violated.

    ``kind`` is one of ``bijection``, ``boundary``, ``accessibility``,
    ``compactness``; ``point`` names the first offending lattice point.
    """

    def __init__(self, kind: str, point=None, detail: str = ""):
        self.kind = kind
        self.point = point
        msg = f"{kind} condition violated"
        if point is not None:
            msg += f" at {tuple(point)}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class DomainError(SelfTransportError):
    """Argument outside the mathematical domain of an operation."""


class QuadratureError(SelfTransportError):
    """Kernel quadrature failed to converge to the requested tolerance."""


class SingularMatrixError(SelfTransportError):
    """A linear system of the construction is numerically singular."""


class ProbabilityError(SelfTransportError):
    """A computed probability is negative beyond the clamping tolerance."""


class MaxStepsExceeded(SelfTransportError):
    """A random walk exceeded the per-trial step cap (open region?)."""
