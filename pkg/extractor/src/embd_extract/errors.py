class ExtractError(Exception):
    """Base class for extraction failures."""

    exit_code = 1


class ManifestError(ExtractError):
    """The metadata CSV or image tree is invalid (missing files, bad rows)."""

    exit_code = 3


class ModelError(ExtractError):
    """The requested backbone cannot be loaded in this environment."""

    exit_code = 4
