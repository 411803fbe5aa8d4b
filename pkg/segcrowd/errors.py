"""
SegCrowd - Error Types

Every failure raised by the package derives from SegCrowdError and carries an
optional suggested_fix, mirroring the reason / suggested_fix fields the
structured logger records for ERROR entries.
"""

from typing import Optional


class SegCrowdError(Exception):
    """Base class for all package errors."""

    def __init__(self, message: str, suggested_fix: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.suggested_fix = suggested_fix

    def __str__(self) -> str:
        if self.suggested_fix:
            return f"{self.message} (fix: {self.suggested_fix})"
        return self.message

    def to_dict(self) -> dict:
        return {
            "type": type(self).__name__,
            "message": self.message,
            "suggested_fix": self.suggested_fix,
        }


class ShapeError(SegCrowdError, ValueError):
    """Operand extents do not satisfy an operator's contract."""


class InputSizeError(ShapeError):
    """Image is smaller than the network's minimum input size."""


class NonFiniteError(SegCrowdError, ArithmeticError):
    """A NaN or Inf appeared in values or gradients."""


class GraphError(SegCrowdError, RuntimeError):
    """Misuse of the autodiff graph (e.g. backward from a non-scalar)."""


class AnnotationError(SegCrowdError, ValueError):
    """Annotation points or regions fall outside their image."""


class ManifestError(SegCrowdError, ValueError):
    """Malformed or invalid dataset manifest."""

    def __init__(
        self,
        message: str,
        line: Optional[int] = None,
        entry_id: Optional[str] = None,
        suggested_fix: Optional[str] = None,
    ):
        location = []
        if line is not None:
            location.append(f"line {line}")
        if entry_id is not None:
            location.append(f"entry {entry_id!r}")
        if location:
            message = f"{message} [{', '.join(location)}]"
        super().__init__(message, suggested_fix)
        self.line = line
        self.entry_id = entry_id


class FormatError(SegCrowdError, ValueError):
    """Binary or text artifact does not match its declared format."""


class ConfigError(SegCrowdError, ValueError):
    """Configuration failed validation."""

    def __init__(self, issues: list[str], suggested_fix: Optional[str] = None):
        self.issues = list(issues)
        super().__init__("Invalid configuration: " + "; ".join(self.issues), suggested_fix)


class DivergenceError(SegCrowdError, RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, iteration: int, detail: str = ""):
        message = f"Training diverged at iteration {iteration}"
        if detail:
            message += f": {detail}"
        super().__init__(message, suggested_fix="Lower train.learning_rate or check input scaling")
        self.iteration = iteration


class SceneGenerationError(SegCrowdError, RuntimeError):
    """Synthetic scene could not be rendered as requested."""


class EvaluationError(SegCrowdError, ValueError):
    """Metric or evaluation protocol precondition failed."""


class DomainError(SegCrowdError, ValueError):
    """Argument value outside the domain an operation is defined on."""
