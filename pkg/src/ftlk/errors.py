"""Shared exception types mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Invalid configuration or arguments. CLI exit code 2.

    `violations` lists every violated invariant, not just the first.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NumericError(RuntimeError):
    """NaN/divergence detected in a numeric path. CLI exit code 3."""
