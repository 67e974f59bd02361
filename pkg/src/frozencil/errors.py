"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration errors exit 2, data
errors exit 3, numerical errors exit 4, anything else under
``FrozencilError`` exits 1.
"""


class FrozencilError(Exception):
    """Base class for all package-specific failures."""

    exit_code = 1


class ConfigurationError(FrozencilError):
    """Invalid configuration: bad method string, impossible schedule, ..."""

    exit_code = 2


class DataError(FrozencilError):
    """Data violates a precondition: empty view, class with no samples, ..."""

    exit_code = 3


class NumericalError(FrozencilError):
    """A numerical procedure failed (e.g. singular scatter matrix)."""

    exit_code = 4


class FormatError(DataError):
    """A file does not conform to its declared on-disk format."""


class LabelError(DataError):
    """A record references a class index outside the declared class table."""


class DimensionError(DataError):
    """Vector or matrix dimensions do not match the declared shape."""


class ConflictError(FrozencilError):
    """An incremental update collides with existing state (duplicate class)."""


class StateError(FrozencilError):
    """An operation was invoked on an object in an unusable state."""


class ProtocolError(FrozencilError):
    """The class-incremental evaluation protocol was violated (i > k)."""


class DegenerateInputError(FrozencilError):
    """An input is degenerate for the requested operation (zero vector)."""
