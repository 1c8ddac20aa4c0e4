"""Exception types shared across the package."""


class RemaskError(Exception):
    """Base class for all package errors."""


class ConfigError(RemaskError):
    """Invalid configuration or construction parameters."""


class PreconditionError(RemaskError):
    """An operation was called with arguments violating its contract."""


class DegenerateConditional(RemaskError):
    """The conditioning state has zero mass under the joint."""


class TransportError(RemaskError):
    """Remote backend communication failure.

    Carries the request id that failed, when known.
    """

    def __init__(self, message, request_id=None):
        super().__init__(message)
        self.request_id = request_id


class BudgetMismatchError(RemaskError):
    """Comparison requested across configs with unequal NFE budgets."""


class EnumerationCapError(RemaskError):
    """Exhaustive search refused: subset count exceeds the configured cap."""
