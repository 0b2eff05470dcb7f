"""Exception hierarchy shared by every module in the package."""


class SpikeAdaptError(Exception):
    """Base class for all package-specific failures."""


class ShapeMismatch(SpikeAdaptError):
    """Operands have incompatible shapes."""


class InvalidConfig(SpikeAdaptError):
    """A configuration value is out of its legal range or unknown."""


class EmptyBatch(SpikeAdaptError):
    """An operation that needs at least one sample received zero."""


class DisconnectedGraph(SpikeAdaptError):
    """backward() was asked to start from a tensor the tape never produced."""


class LabelOutOfRange(SpikeAdaptError):
    """A class label falls outside [0, num_classes)."""


class NonFiniteLoss(SpikeAdaptError):
    """Training loss became NaN/Inf."""


class NonFiniteGradient(SpikeAdaptError):
    """A gradient became NaN/Inf; the offending update must be skipped."""


class MissingStats(SpikeAdaptError):
    """Normalization statistics were never populated."""


class DegenerateVariance(SpikeAdaptError):
    """A variance estimate (plus eps) is not positive."""


class ZeroGamma(SpikeAdaptError):
    """A normalization scale of exactly zero cannot be folded into a threshold."""


class ModeError(SpikeAdaptError):
    """The requested forward mode is not valid for this model."""


class BadMagic(SpikeAdaptError):
    """An IDX file starts with the wrong magic number."""


class CountMismatch(SpikeAdaptError):
    """Image and label files disagree on the number of records."""


class TruncatedFile(SpikeAdaptError):
    """A binary file ended before its declared payload."""


class InvalidSeverity(SpikeAdaptError):
    """Corruption severity must be an integer in 1..5."""
