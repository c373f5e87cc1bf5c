"""Exception hierarchy. Every error the library raises derives from WalError."""


class WalError(Exception):
    """Base class for all library errors."""


class ConfigError(WalError):
    """Invalid configuration value or unparseable config file."""

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class DataError(WalError):
    """Malformed dataset contents (shape/label inconsistencies)."""


class SplitError(WalError):
    """A requested split cannot be satisfied by the available samples."""


class ParseError(WalError):
    """Malformed container file; carries the failing byte offset."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class SchemaError(WalError):
    """Container parses but its declared schema is internally inconsistent."""


class AnnotatorError(WalError):
    """A weak annotator cannot produce a label for the given input."""


class TrainingAbort(WalError):
    """Non-finite loss encountered; carries the partial stage report."""

    def __init__(self, message, stage_report=None):
        super().__init__(message)
        self.stage_report = stage_report
