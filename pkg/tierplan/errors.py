"""
Exception hierarchy for tierplan.

Every domain error is also a ValueError so callers that only guard against
bad values keep working. ``exit_code`` is what the CLI returns for it.
"""

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_GUARD = 3
EXIT_VERIFICATION = 4


class TierPlanError(ValueError):
    """Base class for all tierplan errors."""

    exit_code = EXIT_CONFIG


class GraphError(TierPlanError):
    """Malformed or inconsistent DNN graph description."""


class ShapeError(GraphError):
    """Feature-map dimensions that do not follow the sliding-window rule."""


class TileError(TierPlanError):
    """Invalid tile coordinates or grid for a fused tile plan."""


class LatencyModelError(TierPlanError):
    """Regression fitting or weighting failure."""


class PlanError(TierPlanError):
    """Incomplete or invalid tier assignment."""


class ConfigError(TierPlanError):
    """Unreadable or schema-invalid configuration document."""


class GuardError(TierPlanError):
    """A size or resolution guard was exceeded."""

    exit_code = EXIT_GUARD


class VerificationError(TierPlanError):
    """Tiled execution disagreed with whole-stack execution."""

    exit_code = EXIT_VERIFICATION
