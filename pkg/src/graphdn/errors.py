"""Exception taxonomy. The CLI maps these onto exit codes."""


class GraphDnError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(GraphDnError):
    """Bad command line or malformed flag value. CLI exit code 1."""


class DataError(GraphDnError):
    """Unreadable or inconsistent input data (images, manifests, checkpoints). Exit code 2."""


class ConfigError(GraphDnError):
    """Invalid or contradictory configuration. Exit code 2."""


class ShapeError(GraphDnError):
    """Tensor rank or extent mismatch. Exit code 2."""


class NumericError(GraphDnError):
    """Non-finite values where finite ones are required. Exit code 3."""


class AutodiffError(GraphDnError):
    """Misuse of the differentiation tape."""
