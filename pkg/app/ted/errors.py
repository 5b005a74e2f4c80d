"""Exceptions raised by the tolerant edit distance toolkit."""


class TedError(Exception):
    """Base class for all toolkit errors."""


class VolumeFormatError(TedError, ValueError):
    """A volume file or label array is malformed."""


class DimensionMismatchError(TedError, ValueError):
    """Two volumes that must share a grid do not."""


class LabelNotFoundError(TedError, LookupError):
    """A label was requested that does not occur in the volume."""


class ModelError(TedError, ValueError):
    """Candidate regions do not form a valid TED model."""


class InfeasibleAssignmentError(TedError, ValueError):
    """An assignment violates the model constraints."""


class EnumerationLimitError(TedError):
    """The brute-force search space exceeds the configured cap."""


class EmptyDomainError(TedError, ValueError):
    """Not enough evaluated locations for the requested measure."""


class SynthesisError(TedError, ValueError):
    """A synthetic generator's preconditions are violated."""
