"""Exception hierarchy shared across the package."""


class WardsimError(Exception):
    """Base class for all package errors."""


class AgeError(WardsimError):
    """Timestamp before birth or malformed age component."""


class RecordError(WardsimError):
    """Malformed tabular record that cannot even be reported as an exclusion."""


class TimelineStructureError(WardsimError):
    """Record sequence violates a timeline invariant (e.g. discharge without admission)."""

    def __init__(self, rule: str, detail: str = ""):
        self.rule = rule
        self.detail = detail
        super().__init__(f"{rule}: {detail}" if detail else rule)


class SchemeError(WardsimError):
    """Inconsistent subtoken or time-bin scheme parameters."""


class TokenizationError(WardsimError):
    """Code shape does not match its subtoken scheme."""


class UnknownCodeError(WardsimError):
    """Code or (code, unit) pair absent from the vocabulary at inference time."""

    def __init__(self, code: str, detail: str = ""):
        self.code = code
        super().__init__(f"unknown code {code!r}" + (f" ({detail})" if detail else ""))


class CodecError(WardsimError):
    """Numeric or temporal codec parameter/domain violation."""


class HorizonOverflowError(CodecError):
    """Time progression at or beyond the long-scheme upper limit."""


class GenerationError(WardsimError):
    """Decoding could not proceed (e.g. fully masked logits)."""


class TrainingDivergedError(WardsimError):
    """NaN/inf loss during training; carries step diagnostics."""

    def __init__(self, step: int, epoch: int, lr: float):
        self.step = step
        self.epoch = epoch
        self.lr = lr
        super().__init__(f"loss diverged at epoch {epoch}, step {step} (lr={lr:.3g})")


class EvaluationError(WardsimError):
    """Event detection or metric computation on incompatible inputs."""


class CheckpointError(WardsimError):
    """Checkpoint missing, corrupt, or vocabulary hash mismatch."""


class ConfigError(WardsimError):
    """Invalid run configuration."""
