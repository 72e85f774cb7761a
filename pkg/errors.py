"""
Exception hierarchy shared by every component of the attack benchmark.

The CLI maps any VideoAttackError to exit code 1; everything else is a bug.
"""
from typing import Optional


class VideoAttackError(Exception):
    """Base class for all domain errors."""


class DatasetLoadError(VideoAttackError):
    """Manifest or clip directory missing or unreadable."""


class FrameFormatError(VideoAttackError):
    """Frames of one clip disagree in shape or are not RGB."""


class LabelError(VideoAttackError):
    """A class name is not part of the ontology."""


class ParameterError(VideoAttackError, ValueError):
    """Invalid argument or configuration value."""


class TrainingError(VideoAttackError):
    def __init__(self, message: str, epoch: Optional[int] = None):
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
        self.epoch = epoch


class CheckpointError(VideoAttackError):
    """Model checkpoint missing or unreadable."""


class InterfaceError(VideoAttackError):
    """Caller asked a model for something it does not expose."""


class DegenerateInputError(VideoAttackError):
    """Zero feature vector, zero anchor or near linear dependence."""


class BudgetExceededError(VideoAttackError):
    def __init__(self, query_limit: int):
        super().__init__(f"Oracle query budget of {query_limit} exhausted")
        self.query_limit = query_limit


class ConfigError(VideoAttackError):
    def __init__(self, message: str, key: Optional[str] = None):
        if key:
            message = f"{key}: {message}"
        super().__init__(message)
        self.key = key


class ReportError(VideoAttackError, OSError):
    """Output directory could not be written."""


class OverlapExperimentError(VideoAttackError):
    def __init__(self, message: str, level_index: int):
        super().__init__(f"Overlap level {level_index}: {message}")
        self.level_index = level_index
