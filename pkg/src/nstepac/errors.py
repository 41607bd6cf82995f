"""Exception hierarchy shared by all nstepac modules."""


class NstepacError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(NstepacError, ValueError):
    """An array does not have the shape an operation requires."""


class ContractError(NstepacError, RuntimeError):
    """A caller broke an operation's precondition (stale cache, bad window...)."""


class NumericalError(NstepacError, FloatingPointError):
    """A NaN or Inf appeared where only finite values are allowed."""


class ConfigError(NstepacError, ValueError):
    """Invalid configuration value."""


class OrderingError(NstepacError, ValueError):
    """Transitions pushed out of environment order."""


class UnavailableError(NstepacError, LookupError):
    """Requested data does not exist yet (e.g. sampling an empty buffer)."""


class CapabilityError(NstepacError, TypeError):
    """The environment cannot support the requested diagnostic."""


class IncompleteError(NstepacError, FileNotFoundError):
    """A run directory is missing the outputs a comparison needs."""


class ParseError(NstepacError, ValueError):
    """A file on disk could not be parsed."""


class EmptyPlotError(NstepacError, ValueError):
    """Nothing to draw."""
