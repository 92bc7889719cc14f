"""Exception and warning types raised across the package."""


class DiffPerfError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DiffPerfError, ValueError):
    """A configuration is structurally invalid (e.g. every class is empty)."""


class ParameterError(DiffPerfError, ValueError):
    """A tuning parameter lies outside its admissible range."""


class DomainError(DiffPerfError, ValueError):
    """A function was evaluated outside its mathematical domain."""


class NumericError(DiffPerfError, ArithmeticError):
    """An iterative numerical routine failed to converge."""


class DegenerateClassError(DomainError):
    """Throughput samples have zero spread, so z-scores are undefined."""


class RegistrationError(DiffPerfError, KeyError):
    """A flow id was registered twice."""


class AccountingError(DiffPerfError, RuntimeError):
    """Byte accounting broke: delivery to a finished client, or a conservation breach."""


class ValidationError(DiffPerfError, ValueError):
    """A scenario file failed validation.

    ``field`` names the offending config path, e.g. ``link.capacity``.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class SimulationAbort(DiffPerfError, RuntimeError):
    """A simulation produced a non-finite value."""

    def __init__(self, tick, message):
        super().__init__(f"tick {tick}: {message}")
        self.tick = tick


class CounterResetWarning(UserWarning):
    """A byte counter went backwards and was treated as a reset."""


class UnknownFlowWarning(UserWarning):
    """An operation referenced a flow id that is not registered."""
