"""Exception types shared across the pipeline."""


class DomainError(ValueError):
    """A query fell outside the region a field or raster is defined on."""


class ConfigError(ValueError):
    """Inconsistent or invalid configuration, rejected before a trial starts."""


class NoNeedleError(RuntimeError):
    """Perception found too few needle samples to localize the instrument."""


class InpaintingError(RuntimeError):
    """A retinal layer is absent from the entire scan and cannot be filled."""


class DegenerateLayerError(ValueError):
    """RPE is not strictly deeper than ILM where a relative depth is needed."""

    def __init__(self, message: str, sample: tuple[int, ...] | None = None):
        super().__init__(message)
        self.sample = sample


class TrackingLostError(RuntimeError):
    """The needle tip left the lateral extent of the scan."""


class MissingFramesError(LookupError):
    """A trial was asked for frame rasters it never recorded."""
