"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with inputs that violate its contract."""


class DivergenceError(RuntimeError):
    """Training aborted because the loss became non-finite."""


class ConfigError(ValueError):
    """A run configuration is malformed or inconsistent."""


class MissingInputError(FileNotFoundError):
    """A required input file (dataset, checkpoint) is absent."""
