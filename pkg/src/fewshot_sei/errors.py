"""Exception types shared across the package."""


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class InvalidStride(ValueError):
    """Convolution stride must be a positive integer."""


class NonScalarLoss(ValueError):
    """backward() requires a single-element loss tensor."""


class NonFiniteValue(FloatingPointError):
    """A forward result contained NaN or Inf."""


class DisconnectedGraphWarning(RuntimeWarning):
    """backward() found no differentiable input reachable from the loss."""


class InvalidLength(ValueError):
    """A signal or pooling length precondition was violated."""


class LengthMismatch(ValueError):
    """Two signals that must share a length do not."""


class ConstantSignal(ValueError):
    """Min-max normalization is undefined when max equals min."""


class ZeroPowerSignal(ValueError):
    """SNR is undefined for an all-zero signal."""


class SeparationInfeasible(RuntimeError):
    """Could not draw emitter profiles satisfying the separation constraint."""


class InsufficientSamples(ValueError):
    """A class does not hold enough records for the requested episode."""


class EmptyEpisode(ValueError):
    """Training requires a non-empty episode."""


class SingleClass(ValueError):
    """Silhouette requires at least two distinct labels."""


class EmptyInput(ValueError):
    """An aggregate over zero items was requested."""


class FileFormatError(Exception):
    """Base for structured binary file errors."""


class MalformedHeader(FileFormatError):
    """File does not start with the expected magic/header."""


class TruncatedPayload(FileFormatError):
    """File ended before the declared payload was read."""


class UnsupportedVersion(FileFormatError):
    """File version is newer than this reader understands."""


class BenchmarkRunError(RuntimeError):
    """A Monte Carlo run failed; the message names the offending seed."""


class ConfigError(ValueError):
    """Run configuration file or overrides are invalid."""
