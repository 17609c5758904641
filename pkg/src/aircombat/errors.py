"""Exception types raised across the package."""


class AirCombatError(Exception):
    """Base class for all package errors."""


class InvalidStateError(AirCombatError, ValueError):
    """A physical state or control input is non-finite or out of range."""


class DegenerateGeometryError(AirCombatError, ValueError):
    """Two bodies share a position, so relative angles are undefined."""


class InvalidLaunchError(AirCombatError, ValueError):
    """A missile launch was requested from a dead aircraft."""


class InvalidActionError(AirCombatError, ValueError):
    """An action index is outside its bin range or has the wrong type."""


class InsufficientDataError(AirCombatError, ValueError):
    """A replay buffer holds fewer transitions than requested."""


class NumericalError(AirCombatError, FloatingPointError):
    """A loss or training target became non-finite."""


class ConfigError(AirCombatError, ValueError):
    """Invalid configuration value or task/protocol combination."""


class IntegrityError(AirCombatError):
    """A checkpoint file is corrupt or does not match the running config."""


class SchemaError(AirCombatError, ValueError):
    """A metrics row or file does not match the run's column schema."""
