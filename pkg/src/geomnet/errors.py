"""Exception hierarchy shared by every geomnet module."""


class GeomnetError(Exception):
    """Base class for all errors raised by geomnet."""


class ShapeError(GeomnetError, ValueError):
    pass


class DomainError(GeomnetError, ValueError):
    pass


class ConfigError(GeomnetError, ValueError):
    pass


class ContractError(GeomnetError, RuntimeError):
    pass


class GenerationError(GeomnetError, RuntimeError):
    pass


class FormatError(GeomnetError, ValueError):
    """Malformed IDX or checkpoint file. ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
