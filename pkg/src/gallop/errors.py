"""Exception hierarchy shared across the package."""


class GallopError(Exception):
    """Base class for all domain errors raised by this package."""


class InvalidTiming(GallopError):
    """A footfall timing is outside [0, 1) or defines a zero-duration stance."""


class NotAGallop(GallopError):
    """A footfall sequence has no usable fore or hind lateral lag."""


class AmbiguousCategory(GallopError):
    """The fore-hind lag sits exactly on a category boundary."""


class SimultaneousEvents(GallopError):
    """Two touchdown/lift-off events coincide within tolerance."""


class SingularConfiguration(GallopError):
    """The mass matrix is ill-conditioned beyond the configured bound."""


class InconsistentContact(GallopError):
    """A stance foot violates its holonomic constraint beyond tolerance."""


class RankDeficientContact(GallopError):
    """The stacked contact Jacobian lost row rank."""


class IntegrationFailure(GallopError):
    """The adaptive integrator failed to complete a domain."""


class InfeasibleBounds(GallopError):
    """Requested target is impossible under the box limits alone."""


class IkFailure(GallopError):
    """Inverse kinematics target is out of reach."""


class ZeroDisplacement(GallopError):
    """Cost of transport is undefined for zero forward displacement."""


class LayoutMismatch(GallopError):
    """A decision vector does not match the problem layout."""


class EvaluationFailure(GallopError):
    """Problem functions returned non-finite values at a trusted point."""


class SeedFailure(GallopError):
    """The seed-speed solve of a sweep failed for a template."""


class MissingPair(GallopError):
    """A rotary/transverse comparison lacks one footfall type."""


class IoFailure(GallopError):
    """A report or trajectory file could not be written."""
