"""Error types shared across the package."""


class GraderError(Exception):
    """Base class for all convgrader errors."""


class ShapeError(GraderError):
    def __init__(self, op: str, shapes, detail: str = ""):
        self.op = op
        self.shapes = tuple(shapes)
        msg = f"{op}: incompatible shapes {self.shapes}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ContractError(GraderError):
    """A caller violated an operation precondition."""


class ConfigError(GraderError):
    """Invalid configuration value or combination."""


class ValidationError(GraderError):
    """Bad input data; carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointError(GraderError):
    """Unreadable or mismatched parameter checkpoint."""


class NumericError(GraderError):
    """Non-finite value produced where finite math was expected."""


class TrainingAborted(GraderError):
    def __init__(self, message: str, batch_id: str):
        self.batch_id = batch_id
        super().__init__(f"{message} (batch {batch_id})")
