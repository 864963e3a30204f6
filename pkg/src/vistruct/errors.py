"""Exception types shared across the package."""

from __future__ import annotations


class VistructError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(VistructError):
    """A record violates its schema or an invariant.

    Carries the offending field and, when known, the 1-based line number of
    the source file.
    """

    def __init__(self, message: str, *, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        prefix = ""
        if field is not None:
            prefix += f"field {field!r}: "
        suffix = f" at line {line}" if line is not None else ""
        super().__init__(f"{prefix}{message}{suffix}")


class DuplicateIdError(SchemaError):
    """Two records in one corpus share an identifier."""


class TemplateError(VistructError):
    """A prompt template is missing a binding or was rendered incompletely."""


class ClientError(VistructError):
    """A chat or embedding backend failed."""


class RetryExhaustedError(ClientError):
    """A transient backend failure persisted past the retry budget."""


class EmbeddingDimError(ClientError):
    """An embedding provider changed output dimension mid-run."""


class RewriteParseError(VistructError):
    """A rewrite response did not contain the three labeled sections."""


class QuarantineOverflowError(VistructError):
    """Too many items were quarantined during filtration to trust the run."""


class StageInputError(VistructError):
    """A pipeline stage was invoked before its prerequisite outputs exist."""
