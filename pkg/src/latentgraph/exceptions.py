"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Tensor or array dimensions are incompatible."""


class RankError(ValueError):
    """An operation received a tensor of the wrong rank."""


class GradientError(RuntimeError):
    """A gradient was required but never populated."""


class ConfigurationError(ValueError):
    """Model, data or training configuration is inconsistent."""


class TopologyError(ValueError):
    """Invalid graph structure (self edges, bad indices, ...)."""


class NoAdjacencyError(ValueError):
    """The model topology does not infer any adjacency."""


class DataFormatError(ValueError):
    """Malformed input file."""


class MissingValueError(DataFormatError):
    """Input panel contains missing or non-finite values."""


class NumericalError(FloatingPointError):
    """A NaN or Inf showed up where a finite value is required."""



class ZeroVarianceError(ValueError):
    """A series is constant where a spread is required."""
