"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is out of its valid domain (bad intrinsics, nonpositive depth, ...)."""


class FormatError(ValueError):
    """A file or byte payload does not follow the expected container layout."""


class ParseError(FormatError):
    """A text record could not be parsed; ``index`` names the offending field."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
