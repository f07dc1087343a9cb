"""Exception hierarchy shared by all modules."""


class LmbFuseError(Exception):
    """Base class for all package errors."""


class ConfigError(LmbFuseError):
    pass


class NotInFilterState(LmbFuseError):
    """Raised for features that are carried outside the filter state (height)."""


class InvalidReferencePoint(LmbFuseError):
    pass


class GeometryError(LmbFuseError):
    pass


class NumericalError(LmbFuseError):
    pass


class ValidationError(LmbFuseError):
    pass


class SchemaError(LmbFuseError):
    """Malformed wire record. ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class UnknownSensor(LmbFuseError):
    pass


class LateMessage(LmbFuseError):
    pass
