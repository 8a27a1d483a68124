"""Exception hierarchy shared by every module of the package."""


class CinppError(Exception):
    """Base class for all package errors."""


class GraphError(CinppError, ValueError):
    pass


class SelfLoop(GraphError):
    pass


class DuplicateEdge(GraphError):
    pass


class IndexOutOfRange(GraphError):
    pass


class FeatureShapeMismatch(GraphError):
    pass


class UnknownCell(CinppError, KeyError):
    pass


class MissingFeatures(CinppError, ValueError):
    pass


class NotConverged(CinppError, RuntimeError):
    pass


class DomainMismatch(CinppError, ValueError):
    pass


class ShapeMismatch(CinppError, ValueError):
    pass


class NonFinite(CinppError, FloatingPointError):
    pass


class NotScalar(CinppError, ValueError):
    pass


class EmptyComplex(CinppError, ValueError):
    pass


class EmptySplit(CinppError, ValueError):
    pass


class EmptyDataset(CinppError, ValueError):
    pass


class BadParams(CinppError, ValueError):
    pass


class Malformed(CinppError, ValueError):
    """A data file line could not be parsed.  ``line`` is 1-based."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class VersionMismatch(CinppError, ValueError):
    pass


class CorruptBlob(CinppError, ValueError):
    pass
