"""Exception types shared across the package."""


class RetroFallbackError(Exception):
    """Base class for all package errors."""


class InvalidInputError(RetroFallbackError, ValueError):
    """An argument violates a documented precondition on its value."""


class PreconditionError(RetroFallbackError):
    """An operation was invoked in a state where it is not allowed."""


class RejectedProposalError(RetroFallbackError):
    """A backward-model proposal violates the reaction invariants."""


class NotFoundError(RetroFallbackError, KeyError):
    """A referenced molecule or node does not exist in the graph."""


class CapacityError(RetroFallbackError):
    """An exact computation was refused because the instance is too large."""


class NumericalError(RetroFallbackError):
    """A numerical routine failed to converge or lost positive definiteness."""


class InternalInconsistencyError(RetroFallbackError):
    """Invariant violation that indicates a bug rather than bad input."""


class ProtocolError(RetroFallbackError):
    """A remote reaction-model response violates the wire protocol."""


class RemoteTimeoutError(RetroFallbackError, TimeoutError):
    """The remote reaction model did not answer within the deadline."""


class ConfigError(RetroFallbackError, ValueError):
    """Experiment configuration validation failed.

    ``problems`` holds one ``"field.path: message"`` entry per issue.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class SerializationError(RetroFallbackError):
    """A record cannot be written (e.g. contains non-finite floats)."""


class MigrationError(RetroFallbackError):
    """A result file was written under an incompatible schema version."""
