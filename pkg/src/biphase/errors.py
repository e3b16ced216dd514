"""Exception hierarchy.

Every error carries a short machine-parsable ``error_class`` used by the CLI
to pick an exit code and emit a single-line diagnostic.
"""


class BiphaseError(Exception):
    error_class = "internal"


class ConfigError(BiphaseError):
    """Invalid parameter, option, or config-file entry."""

    error_class = "config"


class DataError(BiphaseError):
    """Malformed corpus/query/qrels input (carries file and line context)."""

    error_class = "data"


class DuplicateIdError(DataError):
    error_class = "data"


class FileFormatError(BiphaseError):
    """Binary artifact with a bad magic or otherwise unparseable layout."""

    error_class = "format"


class TruncatedFileError(FileFormatError):
    error_class = "format"


class VersionError(BiphaseError):
    """Artifact written by an incompatible format version."""

    error_class = "version"


class ChecksumError(BiphaseError):
    """Artifact payload does not match its stored checksum."""

    error_class = "corrupt"
