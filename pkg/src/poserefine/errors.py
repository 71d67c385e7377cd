"""Exception hierarchy shared across the package."""


class PoseRefineError(Exception):
    """Base class for all package errors."""


class TopologyError(PoseRefineError):
    """The joint tree violates a structural invariant."""


class SchemaError(PoseRefineError):
    """A file failed schema or invariant validation on load."""


class DataError(PoseRefineError):
    """Inputs are structurally valid but inconsistent (shape/unit mismatch)."""


class NumericalError(PoseRefineError):
    """A computation produced non-finite values (e.g. diverging training loss)."""
