"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class ContractViolation(RuntimeError):
    """Raised when a caller breaks a state invariant (e.g. an infeasible selection)."""
