"""Exception hierarchy shared across the toolkit."""


class FormhwrError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(FormhwrError):
    """Invalid or missing configuration (lexicons, fonts, arch, alphabet)."""


class GenerationError(FormhwrError):
    """Text generation could not produce a usable sample."""


class InvalidTransformError(FormhwrError):
    """Affine transform is degenerate (non-invertible 2x2 part)."""


class BoundsError(FormhwrError):
    """A rectangle lies outside the raster it is applied to."""


class InfeasibleLabelError(FormhwrError):
    """Label cannot be emitted in the available number of time steps."""


class OracleSizeError(FormhwrError):
    """Brute-force enumeration guard tripped (instance too large)."""


class LabelEncodingError(FormhwrError):
    """Text contains a symbol outside the active alphabet."""


class NonConformingDocumentError(FormhwrError):
    """Scan could not be aligned to the template within tolerances."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class TrainingDivergedError(FormhwrError):
    """Loss became non-finite during training."""

    def __init__(self, message: str, batch_ids: list[int] | None = None):
        super().__init__(message)
        self.batch_ids = batch_ids or []


class CheckpointError(FormhwrError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written with an unsupported format version."""


class CheckpointShapeError(CheckpointError):
    """Checkpoint tensors do not match the declared architecture."""


class CheckpointCorruptError(CheckpointError):
    """Checkpoint file is unreadable or structurally invalid."""
