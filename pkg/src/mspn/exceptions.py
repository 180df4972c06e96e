"""Exception types raised across the package."""


class ConfigError(ValueError):
    """A configuration value violates an invariant."""


class InvalidInputError(ValueError):
    """An array or value handed to an operation is malformed."""


class SchemaError(ValueError):
    """An input file does not follow the expected JSON schema."""


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite.

    The ``diagnostics`` attribute holds the dump written next to the run
    (iteration, learning rate, batch ids, gradient norms).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
