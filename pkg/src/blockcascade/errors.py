"""Exception types shared across the engine and the service layer."""


class CascadeError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(CascadeError, ValueError):
    """Bad user-supplied input: config fields, schedules, prompts, CLI flags.

    The service maps these to 4xx responses; ``fields`` names the offending
    config keys when known.
    """

    def __init__(self, message, fields=None):
        super().__init__(message)
        self.fields = list(fields) if fields else []


class ContractViolation(CascadeError):
    """An internal caller broke a documented precondition (shape mismatch,
    plan/result mismatch, overlapping pool and batch, ...)."""


class NumericError(CascadeError):
    """Non-finite values entered a numeric kernel."""


class IterationError(CascadeError):
    """A worker failed while executing one batch entry."""

    def __init__(self, message, block_index=None, pass_index=None):
        super().__init__(message)
        self.block_index = block_index
        self.pass_index = pass_index
