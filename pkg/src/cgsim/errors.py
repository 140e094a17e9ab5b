"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A grant, layout or scenario parameter is malformed."""


class ProfileViolation(ConfigurationError):
    """A feature is used under a release profile that does not support it.

    ``row`` names the gating row (for example ``"group_release"``) so that
    callers can report which capability was violated.
    """

    def __init__(self, row, message):
        super().__init__(f"[{row}] {message}")
        self.row = row


class ScenarioError(ConfigurationError):
    """Scenario validation failed. ``issues`` lists ``(field, row, message)``."""

    def __init__(self, issues):
        self.issues = list(issues)
        lines = [f"{f}: {m}" + (f" (row: {r})" if r else "") for f, r, m in self.issues]
        super().__init__("invalid scenario:\n  " + "\n  ".join(lines))

    @property
    def rows(self):
        return {r for _, r, _ in self.issues if r}


class ModelViolation(RuntimeError):
    """An analytical assumption (such as monotonicity) does not hold."""
