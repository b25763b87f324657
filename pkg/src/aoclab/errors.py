"""Exception types shared across the package.

Every numeric failure mode carries a stable ``category`` string so the CLI
can report machine-readable error classes.
"""


class AoclabError(Exception):
    """Base class for all package errors."""

    category = "error"


class ShapeError(AoclabError, ValueError):
    """Operands live on mismatched grids or have incompatible dimensions."""

    category = "shape"


class InadmissibleControlError(AoclabError):
    """The trajectory blew up or left the chart before the final time."""

    category = "inadmissible-control"


class DegenerateFlowError(AoclabError):
    """A fundamental matrix is numerically singular."""

    category = "numeric-degeneracy"


class ShootFailedError(AoclabError):
    """Newton shooting did not converge within the iteration budget."""

    category = "shoot-failed"


class ConjugateObstructionError(AoclabError):
    """Shooting Jacobian is singular at the final time (conjugate target)."""

    category = "conjugate-obstruction"


class UnreachableTargetError(AoclabError):
    """No converged candidate reached the requested target."""

    category = "unreachable-or-failed"


class ConfigError(AoclabError, ValueError):
    """A run configuration is malformed; the message names the offending key."""

    category = "config"
