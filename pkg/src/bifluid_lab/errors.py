"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class NumericsError(RuntimeError):
    """An iterative or adaptive procedure failed to converge."""


class ConfigError(ValueError):
    """A configuration document is malformed or violates a model constraint."""


class CFLError(NumericsError):
    """Explicit transport step rejected; carries a usable time step."""

    def __init__(self, message, suggested_dt):
        super().__init__(message)
        self.suggested_dt = suggested_dt
