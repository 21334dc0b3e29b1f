"""Exception types shared across the package."""


class GeocapError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(GeocapError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(GeocapError, ValueError):
    """Input values fall outside an operation's numeric domain."""


class ContractError(GeocapError, RuntimeError):
    """A caller broke an operation's usage contract."""


class ParseError(GeocapError, ValueError):
    """A file or stream could not be parsed."""


class ValidationError(GeocapError, ValueError):
    """A record, config, or artifact failed invariant validation."""
