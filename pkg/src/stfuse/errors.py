"""Exception types shared across the toolkit."""


class StfuseError(Exception):
    """Base class for all toolkit errors."""


class InvalidValue(StfuseError):
    """A value violates a numeric precondition (non-finite, non-probability, ...)."""


class ShapeError(StfuseError):
    """Operand shapes are incompatible."""


class FormatError(StfuseError):
    """A file does not conform to its declared binary/ASCII format."""


class InputTooSmall(StfuseError):
    """Input image is below the minimum size the algorithm supports."""


class ProvenanceError(StfuseError):
    """A feature vector carries the wrong provenance tag for this operation."""


class DivergenceError(StfuseError):
    """Training produced a non-finite quantity; carries the offending layer name."""

    def __init__(self, layer_name, message=None):
        self.layer_name = layer_name
        super().__init__(message or f"non-finite values at layer {layer_name!r}")


class DegenerateLabels(StfuseError):
    """Classifier training needs at least two distinct classes."""


class RateError(StfuseError):
    """Requested sampling rate exceeds the clip frame rate."""


class EmptyDecisions(StfuseError):
    """Voting requires at least one per-instance decision."""


class BoxError(StfuseError):
    """Bounding box does not intersect the frame."""


class InstanceError(StfuseError):
    """A clip cannot produce any instance for the requested system."""

    def __init__(self, clip_id, message=None):
        self.clip_id = clip_id
        super().__init__(message or f"clip {clip_id!r} yields no instances")


class ConfigError(StfuseError):
    """Configuration document violates the schema; message names the field path."""


class EmptyEval(StfuseError):
    """Evaluation requires at least one prediction."""


class SpecError(StfuseError):
    """Synthetic dataset parameters violate their invariants."""
