"""Exception types shared across the package."""


class HetGNNError(Exception):
    """Base class for all errors raised deliberately by hetgnn."""


class ShapeError(HetGNNError, ValueError):
    """Operand shapes are not conformable for a kernel."""


class GraphError(HetGNNError, ValueError):
    """A graph or entity set violates its invariants."""


class FormatError(HetGNNError, ValueError):
    """A file could not be parsed or fails validation."""


class TrainingError(HetGNNError, RuntimeError):
    """Optimisation produced a non-finite loss or gradient."""
