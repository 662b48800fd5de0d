"""Exception types shared across the package.

Every error raised by the library is a subclass of :class:`MvrateError`,
so callers (and the CLI) can catch one base class and still branch on the
specific condition when they need to.
"""


class MvrateError(Exception):
    """Base class for all package-specific errors."""


# --- motion-vector sidecar parsing -------------------------------------

class MvSidecarError(MvrateError):
    """Malformed or unsupported MVSC sidecar payload."""


class BadMagic(MvSidecarError):
    """Payload does not start with the MVSC magic bytes."""


class TruncatedPayload(MvSidecarError):
    """Payload is shorter than the header-declared cell data requires."""


class VersionUnsupported(MvSidecarError):
    """Sidecar declares a format version this reader does not handle."""


class ZeroDimension(MvSidecarError):
    """Header declares a zero grid dimension or zero frames."""


# --- field geometry and volume assembly ---------------------------------

class CropOutOfBounds(MvrateError):
    """Requested crop window does not fit inside the block grid."""


class TemporalUnderflow(MvrateError):
    """Not enough frames for the requested temporal extent and padding is off."""


class GridTooSmall(MvrateError):
    """Block grid is smaller than the requested crop size."""


class DimensionMismatch(MvrateError):
    """Two fields (or a field and a grid) disagree in size."""


class EmptySequence(MvrateError):
    """A frame sequence that must be nonempty is empty."""


# --- statistical models --------------------------------------------------

class NegativeArgument(MvrateError):
    """Density/CDF evaluated at a negative rate."""


class InsufficientSamples(MvrateError):
    """Too few samples for the requested fit or diagnostic."""


class DegenerateSamples(MvrateError):
    """Samples have zero variance; no distribution can be fitted."""


class NonPositiveSample(MvrateError):
    """A sample outside the positive support of the source model."""


class ZeroVarianceRegressor(MvrateError):
    """All regressor values identical; the slope is unidentifiable."""


# --- selection policy and optimization -----------------------------------

class NegativeRate(MvrateError):
    """Routing queried with a negative motion-vector rate."""


class InvalidThresholds(MvrateError):
    """Threshold pair violates 0 <= r_low <= r_high."""


class InfeasibleBudget(MvrateError):
    """Budget below the all-spatial transmission cost; no policy fits."""


class InvalidAccuracyOrder(MvrateError):
    """Accuracy triple is not ordered acc_3d >= acc_2d >= acc_sp."""


class EmptyBudgetList(MvrateError):
    """Sweep invoked with no budgets."""


class NonPositiveStep(MvrateError):
    """Grid search invoked with a step <= 0."""


# --- dataset ingestion and evaluation -------------------------------------

class ManifestError(MvrateError):
    """Base for manifest ingestion errors; carries the offending line number."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class MalformedLine(ManifestError):
    """Manifest line is not a valid JSON object."""


class InvariantViolation(ManifestError):
    """Record field value violates a documented invariant."""


class MissingRequiredField(ManifestError):
    """Record lacks a required field."""


class MissingCorrectnessBit(MvrateError):
    """A routed video lacks the correctness bit for its classifier."""


class EmptyDataset(MvrateError):
    """Operation requires at least one video record."""


class NonPositiveBinWidth(MvrateError):
    """Histogram binning invoked with width <= 0."""


class MissingField(MvrateError):
    """Aggregation requires an optional record field that is absent."""
