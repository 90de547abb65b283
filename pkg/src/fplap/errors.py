"""Exception hierarchy shared by all modules."""


class FplapError(Exception):
    """Base class for every error raised by this package."""


class InvalidDomain(FplapError):
    """Mesh endpoints are degenerate or the node count is too small."""


class InvalidExponent(FplapError):
    """Lebesgue exponent outside its admissible range."""


class NonFiniteValue(FplapError):
    """An integrand produced NaN or infinity."""


class InvalidParams(FplapError):
    """Problem parameters violate a standing assumption."""


class MeshMismatch(FplapError):
    """Operands live on different meshes."""


class SingularLog(FplapError):
    """Logarithmic potential evaluated at a vanishing nodal value."""


class NonPositiveValue(FplapError):
    """Strictly positive nodal values required but zero/negative ones found."""


class ZeroFunction(FplapError):
    """The zero function is not an admissible direction."""


class NonPositiveT(FplapError):
    """Scalar fiber profiles are defined for positive scaling factors only."""


class DegenerateA(FplapError):
    """Singular-term mass vanishes; the per-direction threshold is infinite."""


class DegenerateB(FplapError):
    """Growth-term mass vanishes; the fiber profile has at most one critical point."""


class BracketFail(FplapError):
    """Root bracketing found no sign change within the expansion budget."""


class NoTwoRoots(FplapError):
    """lambda is at or above the two-critical-point threshold of this direction."""


class NotConverged(FplapError):
    """An iterative solver exhausted its iteration budget before tolerance."""


class NonPositiveEigenvector(FplapError):
    """Principal eigenvector failed to be one-signed after convergence."""


class SupercriticalAlpha(FplapError):
    """Operation requires strictly subcritical growth."""


class EmptyInterval(FplapError):
    """Sub/super-solution pair does not enclose a valid order interval."""


class MonotonicityViolation(FplapError):
    """Monotone iteration produced a decreasing node or overshot the upper barrier.

    Carries the offending node index and the violation magnitude so callers can
    report exactly where the discrete comparison structure broke.
    """

    def __init__(self, message: str, node: int | None = None, magnitude: float | None = None):
        super().__init__(message)
        self.node = node
        self.magnitude = magnitude


class InvalidMode(FplapError):
    """Operation called outside its problem mode."""


class InvalidConstants(FplapError):
    """Embedding constants must be positive and finite."""


class ParseError(FplapError):
    """Config file could not be parsed."""


class ValidationError(FplapError):
    """Config rejected before any computation started."""
