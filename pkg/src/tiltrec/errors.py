"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration values."""


class SolverError(RuntimeError):
    """Iterative solver failed; carries the partial iterate history.

    Attributes
    ----------
    history : dict or None
        Whatever per-iteration diagnostics the solver had accumulated when
        it gave up (objective values, residuals, iterate snapshots).
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history
