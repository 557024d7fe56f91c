"""Exception types raised by the engine and its file codecs."""


class LSMError(Exception):
    """Base class for engine errors."""


class StorageError(LSMError):
    """An I/O operation on run, filter or manifest files failed."""


class CorruptFileError(StorageError):
    """A file failed its magic, version, length or CRC32 check."""


class SchemaMismatchError(LSMError, ValueError):
    """A feature vector was handed to a model trained on another schema."""


class SingleClassError(LSMError, ValueError):
    """Training data contains only one label; use a constant model instead."""
