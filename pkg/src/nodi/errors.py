"""Exception types shared across the package."""


class NodiError(Exception):
    """Base class for all package-specific errors."""


class InvalidHead(NodiError):
    """Classifier head is malformed (bad shapes, non-finite entries)."""


class DimensionError(NodiError):
    """A vector or matrix has a dimension incompatible with its consumer."""


class DegenerateFeature(NodiError):
    """A feature vector cannot be normalized (zero or non-finite norm)."""


class FormatError(NodiError):
    """A serialized container is malformed.  Carries the byte offset where
    parsing failed when that is known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class LabelError(NodiError):
    """A label array is inconsistent with the declared class count."""


class ScheduleError(NodiError):
    """Diffusion schedule parameters are invalid."""


class StepError(NodiError):
    """A timestep index is outside the schedule."""


class EmptyClass(NodiError):
    """A class-conditional point set is empty."""


class TrainingDiverged(NodiError):
    """Training loss became non-finite.  Carries the epoch index."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class MetricError(NodiError):
    """A metric was asked to evaluate an empty or malformed score list."""
