"""Exception hierarchy shared across the package.

CLI exit-code mapping: UsageError -> 2, data/format errors -> 3,
InternalError -> 4.
"""


class BottlenetError(Exception):
    """Base class for all package errors."""


class InvalidShapeError(BottlenetError):
    """A tensor shape violates its invariants (zero dimension, wrong rank...)."""


class ShapeMismatchError(BottlenetError):
    """Two tensors that must agree in shape do not."""


class ChannelMismatchError(BottlenetError):
    """Operator channel count does not match its input."""


class TensorFormatError(BottlenetError):
    """A serialized tensor file is malformed."""


class WeightFormatError(BottlenetError):
    """A weight container file is malformed."""


class WeightNameError(WeightFormatError):
    """Container manifest names do not match the model parameter schema."""


class WeightShapeError(WeightFormatError):
    """A manifest entry's shape does not match the model parameter schema."""


class WeightPayloadError(WeightFormatError):
    """Container payload length disagrees with the manifest."""


class GraphError(BottlenetError):
    """A compute graph violates its invariants (cycle, duplicate producer...)."""


class GraphTooLargeError(GraphError):
    """Exact schedule search refused; caller should fall back to greedy."""


class NotInvertibleError(BottlenetError):
    """The rectifier invertibility condition does not hold for this input."""


class UsageError(BottlenetError):
    """Bad command-line flags or flag combinations."""


class InternalError(BottlenetError):
    """An internal invariant was violated; indicates a bug."""
