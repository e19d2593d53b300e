"""Error types shared across the package.

Numerical failures raise subclasses of AcglueError so the CLI can map them
to a machine-readable report and a dedicated exit code.
"""


class AcglueError(Exception):
    """Base class for all package-specific failures."""


class InvalidSpec(AcglueError):
    """A nonlinearity or configuration violates its declared invariants."""


class NoConvergence(AcglueError):
    """An iterative solve (BVP, Newton, fixed point) stalled."""


class QuadratureUnderflow(AcglueError):
    """A profile tail quantity under/overflows double precision; domain too wide."""


class EndsIntersect(AcglueError):
    """Two asymptotic end graphs cross inside their common validity region."""


class NotInjective(AcglueError):
    """The tube map folds onto itself at a sampled point."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class OutsideTube(AcglueError):
    """A coordinate query lies outside the tubular neighborhood."""


class UnbalancedBeta(AcglueError):
    """End twist parameters do not sum to zero."""


class SingularSystem(AcglueError):
    """A linear solve is rank-deficient beyond the expected kernel."""


class NoContraction(AcglueError):
    """Successive fixed-point differences stopped decreasing."""


class ProbeTooSmall(AcglueError):
    """A flux probe cylinder is too small relative to the dilation scale."""


class StencilOutOfBounds(AcglueError):
    """A finite-difference stencil would read outside the sampled region."""


class PointOutsideCharts(AcglueError):
    """Side-of-surface classification failed for a query point."""


class NotStabilizedWarning(UserWarning):
    """Eigenvalue counts were still changing at the largest truncation radius."""
