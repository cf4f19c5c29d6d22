"""
Custom exceptions for the self-guided masked autoencoder application.
"""


class SelfGuidedMAEException(Exception):
    """Base exception for all self-guided MAE errors."""
    pass


class ConfigException(SelfGuidedMAEException):
    """Raised when a run configuration is malformed or names unknown keys."""
    pass


class NumericsException(SelfGuidedMAEException):
    """Raised when a numerical primitive cannot be evaluated."""
    pass


class NonFiniteInputException(NumericsException):
    """Raised when NaN or Inf values reach a primitive that rejects them."""
    pass


class EigenSolverException(NumericsException):
    """Raised when the generalized eigenproblem is ill-posed or fails."""
    pass


class GradientCheckException(NumericsException):
    """Raised when a gradient check cannot be carried out."""
    pass


class ModelException(SelfGuidedMAEException):
    """Raised when the masked autoencoder fails."""
    pass


class ModelConfigException(ModelException):
    """Raised when a model configuration violates its invariants."""
    pass


class PatchifyException(ModelException):
    """Raised when an image cannot be split into patches."""
    pass


class MaskSpecException(ModelException):
    """Raised when a visible/masked partition is inconsistent."""
    pass


class RelationException(SelfGuidedMAEException):
    """Raised when a token-relation metric cannot be computed."""
    pass


class ProvenanceException(SelfGuidedMAEException):
    """Raised when exploitation rates are invalid."""
    pass


class TriggerOrderException(ProvenanceException):
    """Raised when trigger epochs are appended out of order."""
    pass


class PartitionException(SelfGuidedMAEException):
    """Raised when graph partitioning or informed masking fails."""
    pass


class DegenerateGraphException(PartitionException):
    """Raised when a similarity graph carries no positive edge weight."""
    pass


class TrainingException(SelfGuidedMAEException):
    """Raised when pre-training or probing fails."""
    pass


class TrainingDivergedException(TrainingException):
    """Raised when the reconstruction loss becomes non-finite."""

    def __init__(self, message: str, last_good_checkpoint: str | None = None):
        super().__init__(message)
        self.last_good_checkpoint = last_good_checkpoint


class CheckpointException(SelfGuidedMAEException):
    """Raised when a checkpoint cannot be written or read."""
    pass


class CheckpointVersionException(CheckpointException):
    """Raised when a checkpoint was written by an incompatible format version."""
    pass


class CheckpointConfigMismatchException(CheckpointException):
    """Raised when a checkpoint's model configuration differs from the expected one."""
    pass


class CheckpointCorruptedException(CheckpointException):
    """Raised when a checkpoint file is truncated or malformed."""
    pass


class DatasetException(SelfGuidedMAEException):
    """Raised when a dataset cannot be generated or loaded."""
    pass


class EmptyDatasetException(DatasetException):
    """Raised when a dataset holds no usable image."""
    pass


class InvalidTextureFamilyException(DatasetException):
    """Raised when a texture family list is invalid."""
    pass


class SingleClassDatasetException(DatasetException):
    """Raised when a labeled dataset carries fewer than two classes."""
    pass


class ImageProcessingException(DatasetException):
    """Raised when general image processing fails."""
    pass


class UnreadableImageException(ImageProcessingException):
    """Raised when image cannot be read or decoded."""
    pass


class UnsupportedFileTypeException(ImageProcessingException):
    """Raised when an input file type is not supported."""
    pass
