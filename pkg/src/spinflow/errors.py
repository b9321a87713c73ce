"""Exception taxonomy shared across the package.

Every error raised by spinflow code is a subclass of :class:`SpinflowError`,
except :class:`PhaseConventionBreak` which is a warning category (the
operation recovers by re-anchoring and flags the result).
"""


class SpinflowError(Exception):
    """Base class for all spinflow errors."""


class SingularMetric(SpinflowError):
    """Metric determinant is non-positive (or numerically zero) at a point."""


class OutOfChart(SpinflowError):
    """A requested point lies outside the chart domain."""


class ChartExit(SpinflowError):
    """An integrated curve left the chart domain before its final time."""


class NoConvergence(SpinflowError):
    """An iterative solver (shooting / Newton) exhausted its iteration budget."""


class OutOfRadius(SpinflowError):
    """Point outside the geodesic ball on which the phase is defined."""


class ZeroCovector(SpinflowError):
    """A fiber operation received eta = 0 (the symbol calculus needs h > 0)."""


class DerivativeUnavailable(SpinflowError):
    """A closed-form derivative was requested but the chart/frame lacks it."""


class StencilOutOfDomain(SpinflowError):
    """A finite-difference stencil would leave the chart domain."""


class ToleranceFail(SpinflowError):
    """A guarded internal consistency check exceeded its tolerance."""


class NotSU2(SpinflowError):
    """Input matrix is not (close to) SU(2), or SO(3) input is not a rotation."""


class BranchLoss(SpinflowError):
    """Continuous branch tracking of the quartic root failed (near-caustic)."""


class FitIllConditioned(SpinflowError):
    """Least-squares system for a coefficient fit is numerically degenerate."""


class GridTooCoarse(SpinflowError):
    """A quadrature/sampling grid fails its self-consistency refinement check."""


class TruncationInsufficient(SpinflowError):
    """Spectral sum truncation cannot reach the requested tail bound."""


class UnknownId(SpinflowError):
    """Catalog lookup with an id that is not registered."""


class ConfigInvalid(SpinflowError):
    """CLI/run configuration failed validation."""


class AssertionFailed(SpinflowError):
    """A verification check failed; carries the name of the first failure."""

    def __init__(self, check: str, detail: str = ""):
        self.check = check
        self.detail = detail
        super().__init__(f"check failed: {check}" + (f" ({detail})" if detail else ""))


class PhaseConventionBreak(UserWarning):
    """Anchor component of an eigenvector dropped too low; re-anchored."""
