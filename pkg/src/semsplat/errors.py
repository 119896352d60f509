"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SemsplatError(Exception):
    exit_code = 1


class FormatError(SemsplatError):
    """Malformed or unsupported file contents."""

    exit_code = 2


class DataError(FormatError):
    """Well-formed file holding invalid values (NaN, out-of-range, ...)."""


class EmptySceneError(FormatError):
    pass


class DimensionError(SemsplatError):
    """Shape mismatch or violated call contract."""

    exit_code = 3


class ContractError(DimensionError):
    pass


class TruncatedFileError(SemsplatError, OSError):
    """File ended before its declared payload."""

    exit_code = 1
