"""Exception hierarchy shared by every partforge module."""


class PartforgeError(Exception):
    """Base class for all errors raised by partforge."""


class ShapeError(PartforgeError, ValueError):
    """Tensor extents do not agree with what an operation requires."""


class ContractError(PartforgeError):
    """A caller broke an operation's precondition."""


class DomainError(PartforgeError, ValueError):
    """An argument lies outside the operation's domain."""


class CapacityError(PartforgeError):
    """A part slot exceeds the configured maximum part count."""


class ConfigError(PartforgeError):
    """Invalid or inconsistent configuration."""


class NumericError(PartforgeError):
    """Non-finite values appeared during training or sampling."""


class ParseError(PartforgeError):
    """Malformed input file. ``offset`` is the byte offset, when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedError(PartforgeError):
    """Input uses a feature this reader deliberately does not handle."""
