"""Exception types raised across the simulator."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ContractError(ValueError):
    """A caller broke a structural precondition (shapes, association rules)."""


class IntractableError(RuntimeError):
    """Exhaustive enumeration would exceed the configured cap."""


class UnsupportedOperationError(RuntimeError):
    """The requested operation is not defined for this agent type."""


class NonFiniteError(FloatingPointError):
    """A loss, gradient or metric became NaN or infinite.

    ``diagnostics`` carries whatever state the raiser found useful.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
