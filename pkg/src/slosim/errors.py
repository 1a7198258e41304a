"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid calibration, workload, or experiment configuration."""


class ContractViolation(ValueError):
    """A caller broke an operation precondition (e.g. unsorted input)."""
