"""Exception types shared across the package."""


class FedleakError(Exception):
    """Base class for all package errors."""


class ParseError(FedleakError):
    """A corpus file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class AnnotationError(FedleakError):
    """A PII span is inconsistent with its document."""


class ConfigurationError(FedleakError):
    """Invalid configuration or preconditions."""


class TrainingError(FedleakError):
    """Model training failed."""


class GenerationError(FedleakError):
    """Text generation failed."""


class AggregationError(FedleakError):
    """Models could not be aggregated."""


class StorageError(FedleakError):
    """A checkpoint or artifact is missing or corrupt."""


class BackendError(FedleakError):
    """A generation backend failed after retries."""

    def __init__(self, message: str, status: int | None = None):
        self.status = status
        super().__init__(message)


class ProtocolError(FedleakError):
    """A remote backend returned a malformed response."""


class CapabilityError(FedleakError):
    """The backend does not support the requested operation."""
