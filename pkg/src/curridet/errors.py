"""Exception types shared across the engine."""


class ValidationError(ValueError):
    """An input violates a documented contract (bad config, bad record, bad range)."""


class ParseError(ValidationError):
    """A structured input file could not be parsed.

    Carries the 1-based line number when the source is line-delimited.
    """

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number
