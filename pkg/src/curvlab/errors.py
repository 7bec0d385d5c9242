"""Exception types raised across the toolkit."""


class CurvlabError(Exception):
    """Base class for all toolkit errors."""


class DegenerateInput(CurvlabError):
    """Vectors are numerically dependent (Gram-Schmidt pivot below threshold)."""


class SingularMetric(CurvlabError):
    """Metric failed the Cholesky positivity check."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class BadOrder(CurvlabError):
    """Order m outside the admissible range 1 <= m <= n - 1."""


class BadSpec(CurvlabError):
    """Malformed model specification."""


class NonpositiveWeight(CurvlabError):
    """A weight function took a nonpositive value."""


class NotCritical(CurvlabError):
    """Hypersurface is not a critical point of the weighted area."""


class IterationLimit(CurvlabError):
    """An iterative solver ran out of iterations.

    ``best`` carries the best iterate found so far (solver specific).
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class BadShape(CurvlabError):
    """Array arguments have inconsistent shapes."""


class NotTraceless(CurvlabError):
    """Top-slice second fundamental form is not trace free."""


class IncompleteSlicing(CurvlabError):
    """A slicing does not reach the requested order."""


class WrongOrder(CurvlabError):
    """Operation requires a different slicing order."""


class InfeasiblePair(CurvlabError):
    """(n, m) violates n(m - 2) <= m^2 - 2."""
