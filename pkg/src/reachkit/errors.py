"""Exception taxonomy for reachkit.

Every numerical failure mode has its own class so callers (and the CLI exit
code mapping) can tell configuration problems from geometry problems.
"""


class GeometryError(Exception):
    """Base class for all numerical/geometric failures."""


class DomainEscapeError(GeometryError):
    """A curve or geodesic left the declared coordinate domain."""


class MetricEvaluationError(GeometryError):
    """A chart metric returned a non-finite or non-positive-definite matrix."""


class NonuniqueGeodesicError(GeometryError):
    """Two-point geodesic problem has no unique minimizer (antipodal/cut locus)."""


class ConvergenceError(GeometryError):
    """An iterative solver failed to reach its target residual."""


class ResolutionError(GeometryError):
    """Sample spacing too coarse for the requested tolerance."""


class DegeneratePlaneError(GeometryError):
    """Sectional curvature requested for (near-)parallel vectors."""


class ImmersionDegeneracyError(GeometryError):
    """The immersion differential lost rank at a queried parameter."""


class ProjectionFailureError(GeometryError):
    """Nearest-point projection failed to converge from every start."""


class InvalidReachError(GeometryError):
    """An operation requiring a positive reach received tau <= 0."""


class InvalidConfigurationError(GeometryError):
    """A probe configuration violates the operation's preconditions."""


class ConventionError(GeometryError):
    """Input violates a fixed convention (e.g. transport curve length != 1)."""


class ConfigError(Exception):
    """Scenario configuration is malformed or inconsistent."""


class ScenarioNotFoundError(ConfigError):
    """Requested scenario name is not in the registry."""
