"""Exception hierarchy shared by all modules."""


class GeometryError(ValueError):
    """Base class for numerical-geometry failures."""


class DegenerateProjectionError(GeometryError):
    pass


class PointAtInfinityError(GeometryError):
    pass


class SingularHomographyError(GeometryError):
    pass


class DimensionError(GeometryError):
    pass


class InsufficientPointsError(GeometryError):
    pass


class DegenerateConfigurationError(GeometryError):
    pass


class RankDeficiencyError(GeometryError):
    pass


class NotPositiveDefiniteError(GeometryError):
    pass


class ConfigError(ValueError):
    """Invalid configuration value or file."""
