"""Shared exception types."""


class ConfigError(ValueError):
    """Raised when a configuration value or document is invalid."""


class SloSyntaxError(ConfigError):
    """Raised on a malformed SLO expression.

    Carries the byte offset of the offending token in ``offset``.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class SpecValidationError(ConfigError):
    """Raised when a spec document fails validation.

    ``problems`` holds every detected issue, each prefixed with the
    field path that caused it, so a user can fix the whole file in
    one pass.
    """

    def __init__(self, problems: list[str]):
        super().__init__("invalid spec document:\n" + "\n".join(f"  - {p}" for p in problems))
        self.problems = problems
