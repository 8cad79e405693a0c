"""Exception types shared across the package."""


class SingularGeometryError(ValueError):
    """An element or edge has zero or negative measure."""


class SolverError(RuntimeError):
    """A linear solve failed or did not meet its residual target."""

    def __init__(self, message, residual=None):
        super().__init__(message if residual is None else f"{message} (residual {residual:.3e})")
        self.residual = residual


class TraceError(RuntimeError):
    """The velocity field returned non-finite values during trace-back."""


class PropagationError(RuntimeError):
    """The moving fine mesh inverted during basis propagation."""


class ConformityError(ValueError):
    """Edge traces disagree at a shared coarse vertex."""


class ConfigError(ValueError):
    """Malformed or unknown experiment configuration."""
