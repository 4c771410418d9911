"""Exception types shared by all sembench modules."""


class SembenchError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(SembenchError):
    """Tensor shapes are incompatible with the requested operation."""


class DomainError(SembenchError):
    """A scalar parameter lies outside its valid domain."""


class ConfigError(SembenchError):
    """A configuration object or file is invalid."""


class InputError(SembenchError):
    """Model input (token ids, masks) violates a precondition."""


class SamplingError(SembenchError):
    """A batch cannot be drawn from the corpus as requested."""


class EmptyCorpusError(SembenchError):
    """A corpus file yielded no usable sentences."""


class EmptyDatasetError(SembenchError):
    """An STS directory yielded no parsable pairs."""


class UndefinedCorrelationError(SembenchError):
    """Spearman correlation is undefined (constant input)."""


class CheckpointFormatError(SembenchError):
    """A checkpoint file is corrupt, truncated, or has a bad magic/version."""


class GridError(SembenchError):
    """A sweep grid is malformed."""


class NumericError(SembenchError):
    """A non-finite value appeared during training.

    Carries the training step at which the blowup happened so sweeps can
    report where a trial died.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step
