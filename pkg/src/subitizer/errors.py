"""Exception types; each maps to a CLI exit code."""


class SubitizerError(Exception):
    exit_code = 1


class ConfigError(SubitizerError):
    """Bad configuration, shape mismatch, or invalid argument."""

    exit_code = 2


class DataError(SubitizerError):
    """Unreadable motor table or checkpoint."""

    exit_code = 3


class DivergenceError(SubitizerError):
    """Non-finite loss or gradient during training."""

    exit_code = 4
