"""Exception types shared across the package."""

from __future__ import annotations


class PromptCountError(Exception):
    """Base class for all promptcount errors."""


class GeometryError(PromptCountError, ValueError):
    """Invalid box or point geometry (degenerate, non-finite, out of bounds)."""


class ShapeMismatchError(PromptCountError, ValueError):
    """Two arrays that must share a shape do not."""


class ProtocolError(PromptCountError, ValueError):
    """Malformed reply from an external detector backend."""

    def __init__(self, message: str, record_index: int | None = None):
        if record_index is not None:
            message = f"record {record_index}: {message}"
        super().__init__(message)
        self.record_index = record_index


class TransportError(PromptCountError, RuntimeError):
    """External detector backend unreachable or misbehaving at the transport level."""


class FormatError(PromptCountError, ValueError):
    """Corrupt or truncated binary file."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigurationError(PromptCountError, ValueError):
    """A configuration value or combination that cannot be run."""


class UsageError(PromptCountError, RuntimeError):
    """API called before its prerequisites were established."""


class GenerationError(PromptCountError, RuntimeError):
    """Synthetic scene generation could not satisfy the requested spec."""


class ExemplarSelectionError(PromptCountError, RuntimeError):
    """No usable exemplar could be selected for an image under the strict policy."""


class TrainingError(PromptCountError, RuntimeError):
    """Training aborted on a diagnostic condition such as a non-finite loss."""
