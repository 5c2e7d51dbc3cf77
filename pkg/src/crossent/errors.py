"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class DomainError(ValueError):
    """An outcome lies outside the support of a law."""


class UpdateError(ValueError):
    """A weighted update was requested with no positive weight."""


class SelectionError(RuntimeError):
    """A selection scheme produced only zero weights."""


class NonTerminationError(RuntimeError):
    """Sampling would not terminate within the configured cap."""


class RunError(RuntimeError):
    """A CE run could not complete (e.g. rejection retry cap exceeded)."""
