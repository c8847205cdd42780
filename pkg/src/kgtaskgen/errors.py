"""Exception hierarchy shared across the package."""

from __future__ import annotations


class KGTaskGenError(Exception):
    """Base class for every error raised by this package."""


class GraphError(KGTaskGenError):
    pass


class DuplicateNodeError(GraphError):
    pass


class DuplicateEdgeError(GraphError):
    pass


class UnknownNodeError(GraphError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class DimensionMismatchError(GraphError, ValueError):
    pass


class FrozenGraphError(GraphError):
    pass


class GraphFormatError(GraphError, ValueError):
    """Serialized graph payload is malformed."""


class GraphVersionError(GraphFormatError):
    pass


class SnapshotParseError(KGTaskGenError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class PatternSyntaxError(KGTaskGenError, ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class TemplateError(KGTaskGenError):
    pass


class RenderError(TemplateError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class RequirementError(TemplateError):
    pass


class StepSynthesisError(KGTaskGenError):
    pass


class TaskValidationError(KGTaskGenError, ValueError):
    pass


class RetrievalError(KGTaskGenError):
    pass


class GatewayError(KGTaskGenError):
    pass


class TransportError(GatewayError):
    pass


class ProviderError(GatewayError):
    def __init__(self, message: str, status: int):
        super().__init__(f"{message} (HTTP {status})")
        self.status = status


class ProtocolError(GatewayError):
    pass


class ConfigError(KGTaskGenError):
    pass


class StageError(KGTaskGenError):
    def __init__(self, stage: str, cause: BaseException | str):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class DegenerateInputWarning(UserWarning):
    """Input was accepted but is degenerate (zero vector, empty visual content)."""
