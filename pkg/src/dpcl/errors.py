"""Exception taxonomy shared across the package."""


class DpclError(Exception):
    """Base class for all library errors."""


class FormatError(DpclError):
    """Malformed embedding file (bad magic, header, or byte count)."""


class IntegrityError(DpclError):
    """Structurally valid file whose contents violate an invariant."""


class ConfigurationError(DpclError):
    """Invalid experiment or stream configuration."""


class MappingError(DpclError):
    """Label remapping table is missing a required entry."""


class ScopeViolationError(DpclError):
    """Parallel composition requested over overlapping privacy units."""


class CalibrationError(DpclError):
    """Noise calibration is impossible for the requested budget."""


class LabelReleaseError(DpclError):
    """Invalid label-release request (e.g. demanding a zero failure rate)."""


class DivergenceError(DpclError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite value at training step {step}")


class EmptyModelError(DpclError):
    """Prediction requested from a model with no classes or no members."""


class MetricError(DpclError):
    """Metric undefined for the requested task index."""
