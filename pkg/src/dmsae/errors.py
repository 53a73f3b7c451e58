"""Exception hierarchy shared by the engine and mapped to CLI exit codes."""


class DmsaeError(Exception):
    """Base class for all engine errors."""

    exit_code = 4


class ConfigError(DmsaeError, ValueError):
    """Invalid experiment configuration (unknown keys, bad ranges, burn-in)."""

    exit_code = 2


class DataError(DmsaeError, ValueError):
    """Input data could not be loaded, parsed or aligned."""

    exit_code = 3


class DomainError(DataError):
    """A numerical routine received values outside its domain."""


class SelectionError(DmsaeError, RuntimeError):
    """No comparable candidate exists at a decision date."""


class LookAheadError(DmsaeError, RuntimeError):
    """A stage tried to read information dated after the current step."""
