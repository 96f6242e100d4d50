"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending field."""


class ContractViolation(ValueError):
    """A documented precondition of an operation was violated by the caller."""


class EvaluationError(RuntimeError):
    """Fitness evaluation failed or produced non-finite values."""
