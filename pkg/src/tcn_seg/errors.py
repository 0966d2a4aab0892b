"""Exception types raised across the package."""


class TCNError(Exception):
    """Base class for all package errors."""


class ConfigError(TCNError, ValueError):
    """Invalid configuration, shape mismatch or out-of-range hyperparameter."""


class DataError(TCNError, ValueError):
    """Inputs that disagree with each other or with a model."""


class ParseError(TCNError, ValueError):
    """Malformed file contents. ``location`` names the line or byte offset."""

    def __init__(self, message, location=None, path=None):
        self.location = location
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if location is not None:
            where.append(str(location))
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
