class PdpgNetError(Exception):
    """Base class for all package errors."""


class ConfigError(PdpgNetError):
    pass


class ParseError(PdpgNetError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SchemaError(PdpgNetError):
    pass


class DimensionError(PdpgNetError, ValueError):
    pass


class StateError(PdpgNetError, RuntimeError):
    pass


class EnumerationCapError(PdpgNetError):
    pass


class InfeasibleError(PdpgNetError):
    pass


class ComparisonError(PdpgNetError):
    pass
